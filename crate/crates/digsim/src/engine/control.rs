//! Recorded control input: timestamped normalized channel frames, replayed
//! with zero-order hold.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::excavator::ControlChannels;

/// One recorded control frame for one excavator. All channels are normalized
/// to [-1, +1]; channels omitted from the JSON default to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlFrame {
    pub timestamp: f64,
    pub excavator_id: String,
    #[serde(default)]
    pub channels: ControlChannels,
}

/// Parse a JSONL command log, validating channel ranges and per-excavator
/// timestamp ordering.
pub fn parse_command_log<R: BufRead>(reader: R) -> Result<Vec<ControlFrame>, EngineError> {
    let mut frames: Vec<ControlFrame> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EngineError::CommandLog(format!("line {}: {e}", lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: ControlFrame = serde_json::from_str(&line)
            .map_err(|e| EngineError::CommandLog(format!("line {}: {e}", lineno + 1)))?;
        if !frame.timestamp.is_finite() || frame.timestamp < 0.0 {
            return Err(EngineError::CommandLog(format!(
                "line {}: timestamp {} must be finite and >= 0",
                lineno + 1,
                frame.timestamp
            )));
        }
        if let Some(channel) = frame.channels.out_of_range_channel() {
            return Err(EngineError::CommandLog(format!(
                "line {}: channel `{channel}` outside [-1, 1]",
                lineno + 1
            )));
        }
        if let Some(prev) = frames
            .iter()
            .rev()
            .find(|f| f.excavator_id == frame.excavator_id)
        {
            if frame.timestamp < prev.timestamp {
                return Err(EngineError::CommandLog(format!(
                    "line {}: timestamp {} decreases for excavator `{}`",
                    lineno + 1,
                    frame.timestamp,
                    frame.excavator_id
                )));
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn load_command_log<P: AsRef<Path>>(path: P) -> Result<Vec<ControlFrame>, EngineError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EngineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_command_log(BufReader::new(file))
}

/// Serialize frames back to JSONL (handy for writing scripted scenarios).
pub fn write_command_log<W: std::io::Write>(
    mut w: W,
    frames: &[ControlFrame],
) -> std::io::Result<()> {
    for frame in frames {
        serde_json::to_writer(&mut w, frame)?;
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_frames_with_partial_channels() {
        let log = r#"{"timestamp":0.0,"excavator_id":"e1","channels":{"boom":-0.5}}
{"timestamp":1.0,"excavator_id":"e1","channels":{"track_left":1.0,"track_right":1.0}}
"#;
        let frames = parse_command_log(log.as_bytes()).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].channels.boom, -0.5);
        assert_eq!(frames[0].channels.slew, 0.0);
        assert_eq!(frames[1].channels.track_left, 1.0);
    }

    #[test]
    fn rejects_out_of_range_channel() {
        let log = r#"{"timestamp":0.0,"excavator_id":"e1","channels":{"arm":1.5}}"#;
        let err = parse_command_log(log.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("arm"));
    }

    #[test]
    fn rejects_decreasing_timestamps_per_excavator() {
        let log = r#"{"timestamp":2.0,"excavator_id":"e1","channels":{}}
{"timestamp":1.0,"excavator_id":"e1","channels":{}}
"#;
        assert!(parse_command_log(log.as_bytes()).is_err());
        // Interleaved excavators may restart their own clocks independently.
        let ok = r#"{"timestamp":2.0,"excavator_id":"e1","channels":{}}
{"timestamp":1.0,"excavator_id":"e2","channels":{}}
"#;
        assert!(parse_command_log(ok.as_bytes()).is_ok());
    }

    #[test]
    fn round_trips_through_writer() {
        let frames = vec![ControlFrame {
            timestamp: 0.5,
            excavator_id: "e1".into(),
            channels: ControlChannels {
                bucket: 0.25,
                ..Default::default()
            },
        }];
        let mut buf = Vec::new();
        write_command_log(&mut buf, &frames).unwrap();
        let back = parse_command_log(&buf[..]).unwrap();
        assert_eq!(back, frames);
    }
}
