//! Barometer layout on the airfoil: physical sensor ids, chordwise
//! positions, and the contiguous channel order of working sensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOTAL_SENSORS: usize = 40;
pub const DEAD_SENSORS: [usize; 3] = [20, 27, 34];
pub const WORKING_SENSORS: usize = TOTAL_SENSORS - DEAD_SENSORS.len();
/// Sensor sitting on the leading edge; ids below it run along the upper
/// surface towards the trailing edge, ids above it along the lower surface.
pub const LEADING_EDGE_SENSOR: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surface {
    Upper,
    LeadingEdge,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub id: usize,
    pub surface: Surface,
    /// Chordwise position x/c in [0, 1].
    pub chord: f64,
    /// Signed surface-arc index relative to the leading edge.
    pub arc: f64,
    pub working: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    sensors: Vec<Sensor>,
}

impl Default for SensorLayout {
    fn default() -> Self {
        Self::with_dead(&DEAD_SENSORS)
    }
}

impl SensorLayout {
    pub fn with_dead(dead: &[usize]) -> Self {
        let upper = LEADING_EDGE_SENSOR as f64;
        let lower = (TOTAL_SENSORS - 1 - LEADING_EDGE_SENSOR) as f64;
        let sensors = (0..TOTAL_SENSORS)
            .map(|id| {
                let arc = id as f64 - LEADING_EDGE_SENSOR as f64;
                let (surface, chord) = match id.cmp(&LEADING_EDGE_SENSOR) {
                    std::cmp::Ordering::Less => (Surface::Upper, 0.97 * (-arc / upper)),
                    std::cmp::Ordering::Equal => (Surface::LeadingEdge, 0.0),
                    std::cmp::Ordering::Greater => (Surface::Lower, 0.97 * (arc / lower)),
                };
                Sensor {
                    id,
                    surface,
                    chord,
                    arc,
                    working: !dead.contains(&id),
                }
            })
            .collect();
        Self { sensors }
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn working(&self) -> impl Iterator<Item = &Sensor> {
        self.sensors.iter().filter(|s| s.working)
    }

    /// Physical ids of working sensors in channel order.
    pub fn channel_ids(&self) -> Vec<usize> {
        self.working().map(|s| s.id).collect()
    }

    pub fn channels(&self) -> usize {
        self.working().count()
    }

    pub fn sensor_of_channel(&self, channel: usize) -> Result<usize> {
        self.working()
            .nth(channel)
            .map(|s| s.id)
            .ok_or_else(|| Error::InvalidArgument(format!("no channel {channel}")))
    }

    pub fn channel_of_sensor(&self, id: usize) -> Result<usize> {
        match self.sensors.get(id) {
            Some(s) if s.working => Ok(self.working().take_while(|s| s.id != id).count()),
            Some(_) => Err(Error::InvalidArgument(format!(
                "sensor {id} is not a working sensor"
            ))),
            None => Err(Error::InvalidArgument(format!(
                "unknown sensor id {id} (layout has {TOTAL_SENSORS})"
            ))),
        }
    }
}
