//! Payload bodies for the registered payload types.

use crate::HubError;
use fleetslam_core::OccupancyGrid;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn encode_map(grid: &OccupancyGrid) -> Vec<u8> {
    grid.to_body()
}

pub fn decode_map(bytes: &[u8]) -> Result<OccupancyGrid, HubError> {
    OccupancyGrid::from_body(bytes).map_err(|e| HubError::Protocol(e.to_string()))
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("payload serialization cannot fail")
}

pub fn from_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, HubError> {
    serde_json::from_slice(bytes).map_err(|e| HubError::Protocol(format!("bad payload: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformEntry {
    pub namespace: String,
    /// pose of this map's frame in the anchor map's frame
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub inliers: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSet {
    pub anchor: String,
    pub transforms: Vec<TransformEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergerStatus {
    /// "waiting" or "merged"
    pub state: String,
    pub maps: Vec<String>,
    /// robots whose maps could not be aligned
    pub excluded: Vec<String>,
}
