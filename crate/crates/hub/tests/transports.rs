mod common;

use common::{collect, drain};
use fleetslam_hub::envelope::{Message, WireEnvelope};
use fleetslam_hub::tcp::{encode_frames, read_message, serve_tcp, TcpClient};
use fleetslam_hub::ws::serve_ws;
use fleetslam_hub::{Envelope, Hub, HubClient, HubConfig, HubError, PayloadType, Role, Sequencer};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::net::TcpStream;
use std::thread;
use std::time::Duration;
use tungstenite::Message as WsMessage;

const LONG: Duration = Duration::from_secs(10);

fn payload(ns: &str, k: u64) -> Vec<u8> {
    // arbitrary bytes, including ones that are not valid UTF-8
    (0..64 + k as usize)
        .map(|i| (i as u64 * 31 + k * 7 + ns.len() as u64) as u8 ^ 0xA5)
        .collect()
}

#[test]
fn tcp_three_publishers_two_subscribers() {
    let hub = Hub::new(HubConfig::default());
    let server = serve_tcp(hub.clone(), "127.0.0.1:0").unwrap();
    let addr = server.local_addr();
    let names = ["squeaky1", "squeaky2", "squeaky3"];

    let subscribers: Vec<_> = (0..2)
        .map(|_| {
            let mut c = TcpClient::connect(addr, Role::Ui, None).unwrap();
            c.subscribe("*/scan").unwrap();
            thread::spawn(move || {
                let got = collect(&mut c, 300, Duration::from_secs(30));
                (got, c.dropped())
            })
        })
        .collect();

    let publishers: Vec<_> = names
        .iter()
        .map(|ns| {
            let ns = ns.to_string();
            thread::spawn(move || {
                let mut c = TcpClient::connect(addr, Role::Robot, Some(&ns)).unwrap();
                let mut seq = Sequencer::default();
                let mut sent = Vec::new();
                for k in 0..100 {
                    let p = payload(&ns, k);
                    sent.push(Sha256::digest(&p).to_vec());
                    seq.publish(&mut c, &format!("{ns}/scan"), k as f64 * 0.1, PayloadType::Scan, p)
                        .unwrap();
                }
                seq.publish(&mut c, &format!("{ns}/map"), 10.0, PayloadType::Map, payload(&ns, 999))
                    .unwrap();
                // foreign namespace is refused and the session stays usable
                let err = seq
                    .publish(&mut c, "squeaky9/cmd_vel", 0.0, PayloadType::CmdVel, b"{}".to_vec())
                    .unwrap_err();
                assert!(
                    matches!(&err, HubError::Rejected { code, .. } if code == "namespace_violation"),
                    "{err}"
                );
                seq.publish(&mut c, &format!("{ns}/status"), 0.0, PayloadType::Status, b"ok".to_vec())
                    .unwrap();
                sent
            })
        })
        .collect();
    let sent: Vec<Vec<Vec<u8>>> = publishers.into_iter().map(|h| h.join().unwrap()).collect();

    for h in subscribers {
        let (got, dropped) = h.join().unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(got.len(), 300);
        for (ns, digests) in names.iter().zip(&sent) {
            let mine: Vec<&Envelope> = got.iter().filter(|e| e.publisher.as_deref() == Some(*ns)).collect();
            let seqs: Vec<u64> = mine.iter().map(|e| e.sequence).collect();
            assert_eq!(seqs, (1..=100).collect::<Vec<_>>(), "fifo for {ns}");
            let got_digests: Vec<Vec<u8>> = mine.iter().map(|e| Sha256::digest(&e.payload).to_vec()).collect();
            assert_eq!(&got_digests, digests, "payload digests for {ns}");
        }
    }

    // latched map, delivered raw, to a subscriber that arrives afterwards
    let mut late = TcpClient::connect(addr, Role::Merger, None).unwrap();
    late.subscribe("*/map").unwrap();
    let maps = collect(&mut late, 3, LONG);
    assert_eq!(maps.len(), 3);
    for e in &maps {
        let ns = e.publisher.as_deref().unwrap();
        assert_eq!(e.topic.as_str(), format!("{ns}/map"));
        assert_eq!(Sha256::digest(&e.payload), Sha256::digest(payload(ns, 999)));
    }
    assert!(drain(&mut late, Duration::from_millis(50)).is_empty());
    drop(server);
}

#[test]
fn tcp_rejects_requests_before_hello_and_unknown_types() {
    let hub = Hub::new(HubConfig::default());
    let server = serve_tcp(hub, "127.0.0.1:0").unwrap();
    let mut raw = TcpStream::connect(server.local_addr()).unwrap();
    raw.set_read_timeout(Some(LONG)).unwrap();
    let stop = || false;

    let sub = Message::Subscribe {
        id: 1,
        pattern: "*/map".into(),
    };
    raw.write_all(&encode_frames(&sub, None)).unwrap();
    let (reply, _) = read_message(&mut raw, 1 << 20, &stop).unwrap().unwrap();
    assert!(
        matches!(reply, Message::Error { id: 1, ref code, .. } if code == "not_authenticated"),
        "{reply:?}"
    );

    let hello = Message::Hello {
        id: 2,
        role: Role::Robot,
        namespace: Some("r1".into()),
    };
    raw.write_all(&encode_frames(&hello, None)).unwrap();
    assert!(matches!(
        read_message(&mut raw, 1 << 20, &stop).unwrap().unwrap().0,
        Message::Ack { id: 2 }
    ));

    let mut wire = WireEnvelope::from_envelope(&Envelope::new("r1/scan", 1, 0.0, PayloadType::Scan, vec![1]).unwrap(), false);
    wire.payload_type = "lidar".into();
    raw.write_all(&encode_frames(&Message::Publish { id: 3, envelope: wire }, None))
        .unwrap();
    let (reply, _) = read_message(&mut raw, 1 << 20, &stop).unwrap().unwrap();
    assert!(
        matches!(reply, Message::Error { id: 3, ref code, .. } if code == "unknown_payload_type"),
        "{reply:?}"
    );

    // garbage document: the hub answers with an error and hangs up
    raw.write_all(&[0, 0, 0, 3, b'{', b'x', b'}']).unwrap();
    let (reply, _) = read_message(&mut raw, 1 << 20, &stop).unwrap().unwrap();
    assert!(matches!(reply, Message::Error { ref code, .. } if code == "protocol"));
    assert!(read_message(&mut raw, 1 << 20, &stop).unwrap().is_none());
}

#[test]
fn tcp_oversized_payload_is_rejected() {
    let hub = Hub::new(HubConfig {
        max_payload: 1000,
        queue_depth: 64,
    });
    let server = serve_tcp(hub, "127.0.0.1:0").unwrap();
    let mut c = TcpClient::connect(server.local_addr(), Role::Robot, Some("r1")).unwrap();
    let mut seq = Sequencer::default();
    let err = seq.publish(&mut c, "r1/map", 0.0, PayloadType::Map, vec![0; 1001]).unwrap_err();
    assert!(matches!(&err, HubError::Rejected { code, .. } if code == "oversized"), "{err}");
    seq.publish(&mut c, "r1/map", 0.0, PayloadType::Map, vec![0; 1000]).unwrap();
}

#[test]
fn tcp_and_inproc_clients_share_one_hub() {
    let hub = Hub::new(HubConfig::default());
    let server = serve_tcp(hub.clone(), "127.0.0.1:0").unwrap();
    let mut local = hub.connect(Role::Ui, None).unwrap();
    local.subscribe("r1/pose").unwrap();
    let mut remote = TcpClient::connect(server.local_addr(), Role::Robot, Some("r1")).unwrap();
    remote
        .publish(Envelope::new("r1/pose", 1, 0.5, PayloadType::Pose, b"{\"x\":1}".to_vec()).unwrap())
        .unwrap();
    let got = collect(&mut local, 1, LONG);
    assert_eq!(got[0].payload, b"{\"x\":1}");
    assert_eq!(got[0].timestamp, 0.5);
}

#[test]
fn websocket_carries_the_same_documents() {
    let hub = Hub::new(HubConfig::default());
    let server = serve_ws(hub.clone(), "127.0.0.1:0").unwrap();
    let (mut ws, _) = tungstenite::connect(format!("ws://{}", server.local_addr())).unwrap();
    let send = |ws: &mut tungstenite::WebSocket<_>, m: &Message| ws.send(WsMessage::text(String::from_utf8(m.to_json()).unwrap())).unwrap();
    let next = |ws: &mut tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>| loop {
        if let WsMessage::Text(t) = ws.read().unwrap() {
            return Message::from_json(t.as_bytes()).unwrap();
        }
    };

    let robot = hub.connect(Role::Robot, Some("squeaky1")).unwrap();
    robot
        .publish(Envelope::new("squeaky1/map", 1, 1.0, PayloadType::Map, vec![9, 8, 7]).unwrap())
        .unwrap();

    send(
        &mut ws,
        &Message::Hello {
            id: 1,
            role: Role::Ui,
            namespace: None,
        },
    );
    assert!(matches!(next(&mut ws), Message::Ack { id: 1 }));
    send(
        &mut ws,
        &Message::Subscribe {
            id: 2,
            pattern: "squeaky1/*".into(),
        },
    );
    assert!(matches!(next(&mut ws), Message::Ack { id: 2 }));
    // latched map arrives base64-encoded
    match next(&mut ws) {
        Message::Deliver { envelope, .. } => {
            assert_eq!(envelope.payload_type, "map");
            assert_eq!(envelope.into_envelope(None).unwrap().payload, vec![9, 8, 7]);
        }
        other => panic!("{other:?}"),
    }
    let cmd = Envelope::new("squeaky1/cmd_vel", 1, 2.0, PayloadType::CmdVel, b"{\"vx\":0.1}".to_vec()).unwrap();
    send(
        &mut ws,
        &Message::Publish {
            id: 3,
            envelope: WireEnvelope::from_envelope(&cmd, false),
        },
    );
    assert!(matches!(next(&mut ws), Message::Ack { id: 3 }));
    // its own publish comes back through the subscription
    match next(&mut ws) {
        Message::Deliver { envelope, .. } => assert_eq!(envelope.publisher.as_deref(), Some("ui")),
        other => panic!("{other:?}"),
    }
    ws.close(None).unwrap();
}
