//! Ground-track CSV: CoM path, active waypoint and target events.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::waypoints::TargetEvent;
use crate::error::{Error, Result};
use crate::sim::model::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub time: f64,
    pub com: Vec3,
    pub active_waypoint: usize,
    pub event: Option<TargetEvent>,
}

pub fn write_ground_track<W: Write>(w: W, points: &[TrackPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(["time", "com_x", "com_y", "com_z", "active_waypoint", "event"]).map_err(csv_err)?;
    for p in points {
        let event = match p.event {
            None => String::new(),
            Some(TargetEvent::Arrival(k)) => format!("arrival:{k}"),
            Some(TargetEvent::Timeout(k)) => format!("timeout:{k}"),
        };
        out.write_record([
            format!("{:.4}", p.time),
            format!("{:.6}", p.com.x),
            format!("{:.6}", p.com.y),
            format!("{:.6}", p.com.z),
            p.active_waypoint.to_string(),
            event,
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_rows() {
        let pts = vec![
            TrackPoint { time: 0.0, com: Vec3::new(1.0, 2.0, 0.8), active_waypoint: 0, event: None },
            TrackPoint { time: 0.1, com: Vec3::zeros(), active_waypoint: 1, event: Some(TargetEvent::Arrival(0)) },
        ];
        let mut buf = Vec::new();
        write_ground_track(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "time,com_x,com_y,com_z,active_waypoint,event");
        assert!(lines[2].ends_with("arrival:0"));
    }
}
