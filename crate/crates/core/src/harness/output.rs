//! CSV and plot-data files.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Comparison, TauCurve};
use crate::Result;

/// One curve of a plot: `x,y` rows under a header.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFile {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

/// Writes `<dir>/<name>.csv` and returns its path.
pub fn write_curve(dir: &Path, curve: &CurveFile) -> Result<PathBuf> {
    let path = dir.join(format!("{}.csv", curve.name));
    let mut w = writer(&path)?;
    w.write_record([curve.x_label.as_str(), curve.y_label.as_str()])?;
    for (x, y) in &curve.points {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(path)
}

/// `schemes.csv`, `stopping_histogram.csv` and `comparison.json`.
pub fn write_comparison(dir: &Path, cmp: &Comparison) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let schemes = dir.join("schemes.csv");
    let mut w = writer(&schemes)?;
    w.write_record(["scheme", "frames", "mean_energy", "std_err", "mean_spend", "spend_std_err", "unit"])?;
    for r in &cmp.reports {
        w.write_record([
            r.scheme.name().to_string(),
            r.frames.to_string(),
            r.mean_energy.to_string(),
            r.std_err.to_string(),
            r.mean_spend.to_string(),
            r.spend_std_err.to_string(),
            r.energy_unit.clone(),
        ])?;
    }
    w.flush()?;

    let hist = dir.join("stopping_histogram.csv");
    let mut w = writer(&hist)?;
    let dynamic: Vec<_> = cmp.reports.iter().filter(|r| r.scheme.is_dynamic()).collect();
    let mut header = vec!["kappa".to_string()];
    header.extend(dynamic.iter().map(|r| r.scheme.name().to_string()));
    w.write_record(&header)?;
    let slots = cmp.reports.first().map_or(0, |r| r.stop_histogram.len());
    for k in 0..slots {
        let mut row = vec![k.to_string()];
        row.extend(dynamic.iter().map(|r| r.stop_histogram[k].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;

    let json = dir.join("comparison.json");
    fs::write(&json, serde_json::to_string_pretty(cmp)?)?;
    Ok(vec![schemes, hist, json])
}

/// `<name>.csv` with every column, plus `x,y` plot files for the simulated
/// and closed-form curves.
pub fn write_tau_curve(dir: &Path, name: &str, curve: &TauCurve) -> Result<Vec<PathBuf>> {
    let path = dir.join(format!("{name}.csv"));
    let mut w = writer(&path)?;
    w.write_record(["tau", "energy", "std_err", "analytic"])?;
    for i in 0..curve.taus.len() {
        w.write_record([
            curve.taus[i].to_string(),
            curve.energy[i].to_string(),
            curve.std_err[i].to_string(),
            curve.analytic[i].to_string(),
        ])?;
    }
    w.flush()?;
    let sim = CurveFile {
        name: format!("{name}_sim"),
        x_label: "x".into(),
        y_label: "y".into(),
        points: curve.taus.iter().zip(&curve.energy).map(|(&t, &e)| (t as f64, e)).collect(),
    };
    let analytic = CurveFile {
        name: format!("{name}_analytic"),
        points: curve.taus.iter().zip(&curve.analytic).map(|(&t, &e)| (t as f64, e)).collect(),
        ..sim.clone()
    };
    Ok(vec![path, write_curve(dir, &sim)?, write_curve(dir, &analytic)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_file_layout() {
        let dir = std::env::temp_dir().join(format!("wpt-curve-{}", std::process::id()));
        let curve = CurveFile {
            name: "c".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            points: vec![(1.0, 2.5), (2.0, 3.0)],
        };
        let path = write_curve(&dir, &curve).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "x,y\n1,2.5\n2,3\n");
        fs::remove_dir_all(&dir).unwrap();
    }
}
