//! The merger service: snapshots the latest robot maps and publishes one
//! merged map with its transform set.

use crate::client::{HubClient, Sequencer};
use crate::envelope::PayloadType;
use crate::hub::MERGED_NAMESPACE;
use crate::payload::{decode_map, encode_map, to_json, MergerStatus, TransformEntry, TransformSet};
use crate::HubError;
use fleetslam_core::merge::{merge_maps, MergeConfig, MergeOutput};
use fleetslam_core::OccupancyGrid;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

pub const MAP_PATTERN: &str = "*/map";
pub const MERGED_MAP: &str = "merged/map";
pub const MERGED_TRANSFORMS: &str = "merged/transforms";
pub const MERGED_STATUS: &str = "merged/status";
pub const DEFAULT_CADENCE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq)]
pub enum TickOutcome {
    Waiting,
    Merged { status: MergerStatus, transforms: TransformSet },
}

/// Holds no state that cannot be rebuilt from the hub's latched maps.
pub struct MergerService {
    cfg: MergeConfig,
    maps: BTreeMap<String, OccupancyGrid>,
    seq: Sequencer,
    last: Option<(MergeOutput, Vec<String>)>,
}

impl MergerService {
    pub fn new(cfg: MergeConfig) -> Self {
        Self {
            cfg,
            maps: BTreeMap::new(),
            seq: Sequencer::default(),
            last: None,
        }
    }

    pub fn attach(&mut self, client: &mut dyn HubClient) -> Result<(), HubError> {
        client.subscribe(MAP_PATTERN)
    }

    /// Drain pending deliveries; returns how many maps changed.
    pub fn poll(&mut self, client: &mut dyn HubClient, timeout: Duration) -> Result<usize, HubError> {
        let mut changed = 0;
        let mut wait = timeout;
        while let Some(env) = client.recv_timeout(wait)? {
            wait = Duration::ZERO;
            let ns = env.topic.namespace().to_string();
            if ns == MERGED_NAMESPACE || env.payload_type != PayloadType::Map {
                continue;
            }
            match decode_map(&env.payload) {
                Ok(g) => {
                    self.maps.insert(ns, g);
                    self.last = None;
                    changed += 1;
                }
                Err(e) => log::warn!("ignoring undecodable map from {ns}: {e}"),
            }
        }
        Ok(changed)
    }

    pub fn map_count(&self) -> usize {
        self.maps.len()
    }

    /// Merge the current snapshot and publish it. The first namespace in
    /// sorted order anchors the merged frame.
    pub fn tick(&mut self, client: &mut dyn HubClient, timestamp: f64) -> Result<TickOutcome, HubError> {
        if self.maps.is_empty() {
            let status = MergerStatus {
                state: "waiting".into(),
                maps: Vec::new(),
                excluded: Vec::new(),
            };
            self.seq
                .publish(client, MERGED_STATUS, timestamp, PayloadType::Status, to_json(&status))?;
            return Ok(TickOutcome::Waiting);
        }
        if self.last.is_none() {
            let names: Vec<String> = self.maps.keys().cloned().collect();
            let grids: Vec<OccupancyGrid> = self.maps.values().cloned().collect();
            let out = merge_maps(&grids, &self.cfg).expect("snapshot is non-empty");
            self.last = Some((out, names));
        }
        let (out, names) = self.last.as_ref().expect("merged above");
        let transforms = TransformSet {
            anchor: names[0].clone(),
            transforms: names
                .iter()
                .zip(&out.transforms)
                .filter_map(|(n, t)| {
                    t.map(|t| TransformEntry {
                        namespace: n.clone(),
                        x: t.transform.x,
                        y: t.transform.y,
                        theta: t.transform.theta,
                        inliers: t.inlier_count,
                        confidence: t.confidence,
                    })
                })
                .collect(),
        };
        let status = MergerStatus {
            state: "merged".into(),
            maps: names.clone(),
            excluded: out.excluded.iter().map(|&k| names[k].clone()).collect(),
        };
        let map = encode_map(&out.grid);
        self.seq.publish(client, MERGED_MAP, timestamp, PayloadType::Map, map)?;
        self.seq.publish(
            client,
            MERGED_TRANSFORMS,
            timestamp,
            PayloadType::TransformSet,
            to_json(&transforms),
        )?;
        self.seq
            .publish(client, MERGED_STATUS, timestamp, PayloadType::Status, to_json(&status))?;
        Ok(TickOutcome::Merged { status, transforms })
    }
}

/// Subscribe and tick every `cadence` of wall time until `stop` is set.
pub fn run_merger_service(client: &mut dyn HubClient, cadence: Duration, cfg: MergeConfig, stop: &AtomicBool) -> Result<(), HubError> {
    let mut svc = MergerService::new(cfg);
    svc.attach(client)?;
    let start = Instant::now();
    let mut next = start + cadence;
    while !stop.load(Ordering::Relaxed) {
        let now = Instant::now();
        if now >= next {
            svc.tick(client, (now - start).as_secs_f64())?;
            next += cadence;
            continue;
        }
        svc.poll(client, (next - now).min(Duration::from_millis(100)))?;
    }
    Ok(())
}
