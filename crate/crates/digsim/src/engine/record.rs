//! State-log records: one JSON object per line, fixed key order, every float
//! printed with 9 significant digits so identical runs produce byte-identical
//! logs.

use std::io::{self, Write};

use crate::sensors::SamplePayload;

/// Format a float with 9 significant digits, normalizing negative zero.
pub fn fmt_f64(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.8e}")
}

fn push_array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push(']');
}

fn push_str_field(out: &mut String, key: &str, value: &str) {
    out.push('"');
    out.push_str(key);
    out.push_str("\":");
    out.push_str(&serde_json::to_string(value).expect("string serialization"));
}

/// Serialize one record line (without the trailing newline).
pub fn record_line(
    timestamp: f64,
    excavator_id: &str,
    topic: &str,
    payload: &SamplePayload,
) -> String {
    let mut out = String::with_capacity(192);
    out.push_str("{\"timestamp\":");
    out.push_str(&fmt_f64(timestamp));
    out.push(',');
    push_str_field(&mut out, "excavator_id", excavator_id);
    out.push(',');
    push_str_field(&mut out, "topic", topic);
    out.push_str(",\"payload\":{");
    match payload {
        SamplePayload::Imu(s) => {
            out.push_str("\"kind\":\"imu\",\"linear_acceleration\":");
            push_array(&mut out, &s.linear_acceleration);
            out.push_str(",\"angular_velocity\":");
            push_array(&mut out, &s.angular_velocity);
        }
        SamplePayload::Odometry(s) => {
            out.push_str("\"kind\":\"odometry\",\"position\":");
            push_array(&mut out, &s.position);
            out.push_str(",\"yaw\":");
            out.push_str(&fmt_f64(s.yaw));
            out.push_str(",\"velocity\":");
            push_array(&mut out, &s.velocity);
            out.push_str(",\"yaw_rate\":");
            out.push_str(&fmt_f64(s.yaw_rate));
        }
        SamplePayload::JointState(s) => {
            out.push_str("\"kind\":\"joint_state\",\"name\":[\"slew\",\"boom\",\"arm\",\"bucket\"],\"position\":");
            push_array(&mut out, &s.position);
            out.push_str(",\"velocity\":");
            push_array(&mut out, &s.velocity);
            out.push_str(",\"effort\":");
            push_array(&mut out, &s.effort);
        }
        SamplePayload::Transform(s) => {
            out.push_str("\"kind\":\"transform\",\"translation\":");
            push_array(&mut out, &s.translation);
            out.push_str(",\"rotation\":");
            push_array(&mut out, &s.rotation);
        }
        SamplePayload::BucketMass(s) => {
            out.push_str("\"kind\":\"bucket_mass\",\"mass_kg\":");
            out.push_str(&fmt_f64(s.mass_kg));
        }
        SamplePayload::Range(s) => {
            out.push_str("\"kind\":\"range\",\"ranges\":");
            push_array(&mut out, &s.ranges);
        }
    }
    out.push_str("}}");
    out
}

pub fn write_record<W: Write>(
    w: &mut W,
    timestamp: f64,
    excavator_id: &str,
    topic: &str,
    payload: &SamplePayload,
) -> io::Result<()> {
    let line = record_line(timestamp, excavator_id, topic, payload);
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::{BucketMassSample, OdometrySample};

    #[test]
    fn floats_carry_nine_significant_digits() {
        assert_eq!(fmt_f64(0.01), "1.00000000e-2");
        assert_eq!(fmt_f64(9.81), "9.81000000e0");
        assert_eq!(fmt_f64(0.0), "0.00000000e0");
        assert_eq!(fmt_f64(-0.0), "0.00000000e0");
        assert_eq!(fmt_f64(-1.376), "-1.37600000e0");
    }

    #[test]
    fn record_line_is_valid_json_with_fixed_key_order() {
        let line = record_line(
            0.02,
            "excavator1",
            "/excavator1/odom",
            &SamplePayload::Odometry(OdometrySample {
                position: [1.0, 2.0, 3.0],
                yaw: 0.1,
                velocity: [0.5, 0.0, 0.0],
                yaw_rate: 0.0,
            }),
        );
        assert!(line.starts_with(
            "{\"timestamp\":2.00000000e-2,\"excavator_id\":\"excavator1\",\"topic\":\"/excavator1/odom\",\"payload\":{\"kind\":\"odometry\""
        ));
        let value: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(value["payload"]["position"][1], 2.0);
    }

    #[test]
    fn strings_are_escaped() {
        let line = record_line(
            0.0,
            "we\"ird",
            "/t",
            &SamplePayload::BucketMass(BucketMassSample { mass_kg: 1.0 }),
        );
        let value: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(value["excavator_id"], "we\"ird");
    }
}
