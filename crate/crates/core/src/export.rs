//! CSV trajectory export and the plot description sidecar.
//!
//! Columns: `t`, `eta_1..m`, `p_1..n`, `lam_1..n`, for the gradient
//! controller also `ug_1..n`, `ud_1..n`, `v_1..m_c`, then the monitor
//! channels. Numbers use 17 significant digits, so parsing a file restores
//! every value exactly.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::closed_loop::{ControllerState, MonitorChannels, Trajectory};

/// Column names for a trajectory.
pub fn header(trajectory: &Trajectory) -> Vec<String> {
    let s = &trajectory.states[0];
    let mut cols = vec!["t".to_string()];
    let numbered = |cols: &mut Vec<String>, prefix: &str, len: usize| {
        cols.extend((1..=len).map(|i| format!("{prefix}_{i}")));
    };
    numbered(&mut cols, "eta", s.physical.eta.len());
    numbered(&mut cols, "p", s.physical.p.len());
    numbered(&mut cols, "lam", s.controller.lam().len());
    if let ControllerState::Gradient(c) = &s.controller {
        numbered(&mut cols, "ug", c.ug.len());
        numbered(&mut cols, "ud", c.ud.len());
        numbered(&mut cols, "v", c.v.len());
    }
    cols.extend(MonitorChannels::NAMES.iter().map(|s| s.to_string()));
    cols
}

/// Numeric rows, one per sample, in header order.
pub fn rows(trajectory: &Trajectory) -> Vec<Vec<f64>> {
    trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .zip(&trajectory.channels)
        .map(|((&t, s), ch)| {
            let mut row = vec![t];
            row.extend(s.physical.eta.iter());
            row.extend(s.physical.p.iter());
            row.extend(s.controller.lam().iter());
            if let ControllerState::Gradient(c) = &s.controller {
                row.extend(c.ug.iter());
                row.extend(c.ud.iter());
                row.extend(c.v.iter());
            }
            row.extend(ch.values());
            row
        })
        .collect()
}

pub fn write_trajectory<W: Write>(trajectory: &Trajectory, out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{}", header(trajectory).join(","))?;
    for row in rows(trajectory) {
        let mut first = true;
        for x in row {
            if !first {
                out.write_all(b",")?;
            }
            first = false;
            write!(out, "{x:.16e}")?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Writes the trajectory CSV to `path`.
pub fn export_trajectory(trajectory: &Trajectory, path: impl AsRef<Path>) -> io::Result<()> {
    write_trajectory(trajectory, File::create(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Parses a file written by [`export_trajectory`].
pub fn read_trajectory_csv(path: impl AsRef<Path>) -> io::Result<CsvTable> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header: Vec<String> = match lines.next() {
        Some(line) => line?.split(',').map(str::to_string).collect(),
        None => return Err(bad("empty file".into())),
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let row = line
            .split(',')
            .map(|f| f.parse::<f64>().map_err(|e| bad(format!("row {}: {e}", i + 1))))
            .collect::<io::Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(bad(format!(
                "row {} has {} fields, header has {}",
                i + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct PlotSpec {
    pub title: String,
    pub x: String,
    pub y: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlotSidecar {
    pub trajectory: String,
    pub plots: Vec<PlotSpec>,
}

/// Suggested figures: frequency deviations, prices, dispatch and energy.
pub fn plot_sidecar(trajectory: &Trajectory, csv_name: &str) -> PlotSidecar {
    let cols = header(trajectory);
    let with = |prefix: &str| -> Vec<String> {
        cols.iter()
            .filter(|c| c.strip_prefix(prefix).is_some_and(|r| r.starts_with('_') && r[1..].parse::<usize>().is_ok()))
            .cloned()
            .collect()
    };
    let gradient = matches!(trajectory.states[0].controller, ControllerState::Gradient(_));
    let mut plots = vec![
        PlotSpec {
            title: "frequency deviation".into(),
            x: "t".into(),
            y: with("p"),
            note: Some("omega_i = p_i / M_i".into()),
        },
        PlotSpec {
            title: "local prices".into(),
            x: "t".into(),
            y: with("lam"),
            note: None,
        },
    ];
    if gradient {
        plots.push(PlotSpec {
            title: "generation".into(),
            x: "t".into(),
            y: with("ug"),
            note: None,
        });
        plots.push(PlotSpec {
            title: "demand".into(),
            x: "t".into(),
            y: with("ud"),
            note: None,
        });
    } else {
        plots.push(PlotSpec {
            title: "generation and demand".into(),
            x: "t".into(),
            y: with("lam"),
            note: Some("u_g = Q_g^-1 (lam - c), u_d = Q_d^-1 (b - lam)".into()),
        });
    }
    plots.push(PlotSpec {
        title: "energy".into(),
        x: "t".into(),
        y: vec!["hamiltonian".into(), "shifted_hamiltonian".into()],
        note: None,
    });
    plots.push(PlotSpec {
        title: "optimality".into(),
        x: "t".into(),
        y: vec!["kkt_residual".into(), "price_disagreement".into(), "omega_norm".into()],
        note: None,
    });
    PlotSidecar {
        trajectory: csv_name.to_string(),
        plots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_loop::simulate;
    use crate::scenario::{ControllerChoice, Scenario};

    fn trajectory(choice: ControllerChoice, t_end: f64) -> Trajectory {
        let s = Scenario::four_area().with_controller(choice).unwrap();
        let sys = s.system().unwrap();
        let s0 = s.initial_state(&sys).unwrap();
        let events = if t_end >= 1.0 { s.events().unwrap() } else { Vec::new() };
        simulate(&sys, &s0, t_end, 1e-3, &events, 100).unwrap()
    }

    #[test]
    fn single_sample_gives_two_lines() {
        let tr = trajectory(ControllerChoice::InternalModel, 0.0);
        let mut buf = Vec::new();
        write_trajectory(&tr, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("t,eta_1,eta_2,eta_3,eta_4,p_1,"));
    }

    #[test]
    fn gradient_header_has_controller_columns() {
        let tr = trajectory(ControllerChoice::Gradient, 0.0);
        let h = header(&tr);
        assert_eq!(h.len(), 1 + 4 + 4 + 4 + 4 + 4 + 4 + 6);
        assert_eq!(h[13], "ug_1");
        assert_eq!(h[21], "v_1");
        assert_eq!(h.last().unwrap(), "security_margin");
    }

    #[test]
    fn round_trip_is_exact() {
        let tr = trajectory(ControllerChoice::Gradient, 1.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        export_trajectory(&tr, &path).unwrap();
        let table = read_trajectory_csv(&path).unwrap();
        assert_eq!(table.header, header(&tr));
        let expected = rows(&tr);
        assert_eq!(table.rows.len(), expected.len());
        for (a, b) in table.rows.iter().zip(&expected) {
            let bits = |r: &Vec<f64>| r.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn sidecar_lists_existing_columns() {
        let tr = trajectory(ControllerChoice::Gradient, 0.0);
        let cols = header(&tr);
        let side = plot_sidecar(&tr, "x.csv");
        for plot in &side.plots {
            assert!(!plot.y.is_empty());
            for y in &plot.y {
                assert!(cols.contains(y), "{y}");
            }
        }
    }
}
