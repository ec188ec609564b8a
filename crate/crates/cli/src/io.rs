//! Sensor-log and trajectory file formats.
//!
//! Sensor logs hold one JSON object per line: a header record followed by
//! `imu`, `cable` and `contact` records. Trajectories are whitespace
//! separated `timestamp tx ty tz qx qy qz qw` lines after `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use tensegrity_core::eval::{Pose, Trajectory};
use tensegrity_core::inekf::{ContactVector, ImuSample};
use tensegrity_core::liegroup::Rotation;
use tensegrity_core::shape::{CableMeasurements, CABLES};

use crate::pipeline::{sort_events, Event};
use crate::CliError;

/// Provenance recorded at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Header {
    pub fn new(config_sha256: String, seed: u64) -> Self {
        Header {
            version: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            config_sha256,
            seed,
        }
    }

    /// `#`-prefixed comment lines for text outputs.
    pub fn comment(&self) -> String {
        format!(
            "# {}\n# config_sha256 {}\n# seed {}\n",
            self.version, self.config_sha256, self.seed
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum Record {
    Header {
        version: String,
        config_sha256: String,
        seed: u64,
    },
    Imu {
        t: f64,
        a: [f64; 3],
        w: [f64; 3],
    },
    Cable {
        t: f64,
        l: BTreeMap<String, f64>,
    },
    Contact {
        t: f64,
        c: [bool; 6],
    },
}

fn record(e: &Event) -> Record {
    match e {
        Event::Imu(s) => Record::Imu {
            t: s.timestamp,
            a: s.accel.into(),
            w: s.gyro.into(),
        },
        Event::Cable(m) => Record::Cable {
            t: m.timestamp,
            l: CABLES
                .iter()
                .zip(m.lengths())
                .map(|(&(i, j), &l)| (format!("{i}-{j}"), l))
                .collect(),
        },
        Event::Contact(c) => Record::Contact { t: c.timestamp, c: c.c },
    }
}

pub fn sensor_log_string(header: &Header, events: &[Event]) -> String {
    let mut out = String::new();
    let h = Record::Header {
        version: header.version.clone(),
        config_sha256: header.config_sha256.clone(),
        seed: header.seed,
    };
    for r in std::iter::once(h).chain(events.iter().map(record)) {
        out.push_str(&serde_json::to_string(&r).expect("records serialize"));
        out.push('\n');
    }
    out
}

fn parse_pair(key: &str) -> Option<(usize, usize)> {
    let (i, j) = key.split_once('-')?;
    Some((i.parse().ok()?, j.parse().ok()?))
}

/// Parses a sensor log into a time-ordered event stream.
///
/// Every record is validated; timestamps must strictly increase within each
/// channel. Errors name the offending line.
pub fn parse_sensor_log(text: &str, rod_length: f64) -> Result<(Option<Header>, Vec<Event>), CliError> {
    let mut header = None;
    let mut events = Vec::new();
    let mut last = [f64::NEG_INFINITY; 3];
    let names = ["imu", "cable", "contact"];
    for (k, line) in text.lines().enumerate() {
        let n = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| CliError::Data(format!("line {n}: {m}"));
        let rec: Record = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let (channel, event) = match rec {
            Record::Header {
                version,
                config_sha256,
                seed,
            } => {
                if header.is_some() || !events.is_empty() {
                    return Err(err("header must be the first record".into()));
                }
                header = Some(Header {
                    version,
                    config_sha256,
                    seed,
                });
                continue;
            }
            Record::Imu { t, a, w } => (
                0,
                Event::Imu(ImuSample {
                    timestamp: t,
                    accel: Vector3::from(a),
                    gyro: Vector3::from(w),
                }),
            ),
            Record::Cable { t, l } => {
                let mut pairs = Vec::with_capacity(l.len());
                for (key, v) in &l {
                    let (i, j) = parse_pair(key).ok_or_else(|| err(format!("bad cable key `{key}`")))?;
                    pairs.push((i, j, *v));
                }
                if pairs.len() != 9 {
                    return Err(err(format!("expected 9 cable lengths, found {}", pairs.len())));
                }
                let m = CableMeasurements::from_pairs(t, &pairs, rod_length).map_err(|e| err(e.to_string()))?;
                (1, Event::Cable(m))
            }
            Record::Contact { t, c } => (2, Event::Contact(ContactVector { timestamp: t, c })),
        };
        let t = event.timestamp();
        if !t.is_finite() {
            return Err(err("non-finite timestamp".into()));
        }
        if !(t > last[channel]) {
            return Err(err(format!(
                "{} timestamp {t} does not follow {}",
                names[channel], last[channel]
            )));
        }
        last[channel] = t;
        events.push(event);
    }
    sort_events(&mut events);
    Ok((header, events))
}

pub fn ingest(path: &Path, rod_length: f64) -> Result<Vec<Event>, CliError> {
    let text = read(path)?;
    Ok(parse_sensor_log(&text, rod_length)?.1)
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

pub fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn trajectory_string(header: &Header, traj: &Trajectory) -> String {
    let mut out = header.comment();
    out.push_str("# timestamp tx ty tz qx qy qz qw\n");
    for p in traj.poses() {
        let q = p.rotation.to_quaternion();
        let t = p.position;
        writeln!(out, "{} {} {} {} {} {} {} {}", p.timestamp, t.x, t.y, t.z, q[0], q[1], q[2], q[3]).unwrap();
    }
    out
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory, CliError> {
    let mut poses = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: &str| CliError::Data(format!("line {}: {m}", k + 1));
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| err("expected numbers"))?;
        if v.len() != 8 {
            return Err(err("expected 8 fields: timestamp tx ty tz qx qy qz qw"));
        }
        poses.push(Pose {
            timestamp: v[0],
            rotation: Rotation::from_quaternion(v[4], v[5], v[6], v[7]),
            position: Vector3::new(v[1], v[2], v[3]),
        });
    }
    Trajectory::new(poses).map_err(|e| CliError::Data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tensegrity_core::simulator::{corrupt, generate, Maneuver, SimConfig};

    fn header() -> Header {
        Header::new("ab".repeat(32), 3)
    }

    #[test]
    fn sensor_log_round_trip_is_exact() {
        let cfg = SimConfig {
            script: vec![Maneuver::RollForward(1)],
            ..Default::default()
        };
        let sim = generate(&cfg).unwrap();
        let noisy = corrupt(&sim.streams, &cfg.noise, 1);
        let events = crate::pipeline::merge(&noisy);
        let text = sensor_log_string(&header(), &events);
        let (h, back) = parse_sensor_log(&text, cfg.rod_length).unwrap();
        assert_eq!(h, Some(header()));
        assert_eq!(back, events);
    }

    #[test]
    fn empty_and_interleaved() {
        assert_eq!(parse_sensor_log("", 1.45).unwrap(), (None, vec![]));
        let lines = [
            r#"{"t":0.01,"type":"contact","c":[true,false,true,false,false,true]}"#,
            r#"{"t":0.0,"type":"imu","a":[0,0,9.81],"w":[0,0,0]}"#,
            r#"{"t":0.005,"type":"imu","a":[0,0,9.81],"w":[0,0,0]}"#,
            r#"{"t":0.01,"type":"imu","a":[0,0,9.81],"w":[0,0,0]}"#,
        ];
        let (_, ev) = parse_sensor_log(&lines.join("\n"), 1.45).unwrap();
        let kinds: Vec<_> = ev.iter().map(|e| (e.timestamp(), matches!(e, Event::Imu(_)))).collect();
        assert_eq!(kinds, vec![(0.0, true), (0.005, true), (0.01, true), (0.01, false)]);
    }

    #[test]
    fn errors_name_the_line() {
        let imu = r#"{"t":0.0,"type":"imu","a":[0,0,9.81],"w":[0,0,0]}"#;
        let dup = format!("{imu}\n{imu}\n");
        let e = parse_sensor_log(&dup, 1.45).unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        let truncated = format!("{imu}\n{}", &imu[..20]);
        let e = parse_sensor_log(&truncated, 1.45).unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        let extra = r#"{"t":0.0,"type":"imu","a":[0,0,9.81],"w":[0,0,0],"x":1}"#;
        assert!(parse_sensor_log(extra, 1.45).is_err());
        let short_cable = r#"{"t":0.0,"type":"cable","l":{"0-4":0.8}}"#;
        let e = parse_sensor_log(short_cable, 1.45).unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
    }

    #[test]
    fn trajectory_round_trip() {
        let poses = (0..5)
            .map(|k| Pose {
                timestamp: k as f64 * 0.01,
                rotation: Rotation::from_euler(0.1 * k as f64, -0.2, 0.3),
                position: Vector3::new(k as f64 / 3.0, 1e-12, -2.5),
            })
            .collect();
        let traj = Trajectory::new(poses).unwrap();
        let text = trajectory_string(&header(), &traj);
        assert!(text.starts_with("# tensegrity-cli"));
        let back = parse_trajectory(&text).unwrap();
        for (a, b) in back.poses().iter().zip(traj.poses()) {
            assert_eq!(a.timestamp, b.timestamp);
            assert_eq!(a.position, b.position);
            assert!((a.rotation.matrix() - b.rotation.matrix()).amax() < 1e-15);
        }
        assert!(parse_trajectory("0 1 2\n").is_err());
    }
}
