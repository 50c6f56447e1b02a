//! CSV and SVG rendering, run manifests and replay.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{
    run_ber_sweep, run_filter_comparison, run_scenario_range_sweep, run_tracking, BerPoint, FilterCmpPoint,
    RangePoint, SimError, TickRecord,
};
use super::scenario::{ConfigError, Scenario};

pub const TRACK_HEADER: &str = "t_s,true_x,true_y,raw_x,raw_y,kf_x,kf_y,raw_err,kf_err,visible";
pub const BER_HEADER: &str = "snir_db,ber_sim,ber_theory";
pub const RANGE_HEADER: &str = "d_m,eta,regime";
pub const FILTERCMP_HEADER: &str = "t_s,err_kf_norm,err_raw_norm";

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_SCENARIO_FILE: &str = "scenario.resolved.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Track,
    Ber,
    Range,
    Filtercmp,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Track => "track",
            Experiment::Ber => "ber",
            Experiment::Range => "range",
            Experiment::Filtercmp => "filtercmp",
        }
    }

    pub fn csv_name(&self) -> String {
        format!("{}.csv", self.as_str())
    }
}

/// A named file produced by an experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn track_csv(records: &[TickRecord]) -> String {
    let mut s = format!("{TRACK_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t_s,
            r.truth.x,
            r.truth.y,
            opt(r.raw_estimate.map(|p| p.x)),
            opt(r.raw_estimate.map(|p| p.y)),
            opt(r.filtered_estimate.map(|p| p.x)),
            opt(r.filtered_estimate.map(|p| p.y)),
            opt(r.raw_error_cm),
            opt(r.filtered_error_cm),
            r.visible_count
        );
    }
    s
}

pub fn ber_csv(points: &[BerPoint]) -> String {
    let mut s = format!("{BER_HEADER}\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.snir_db, p.ber_sim, p.ber_theory);
    }
    s
}

pub fn range_csv(points: &[RangePoint]) -> String {
    let mut s = format!("{RANGE_HEADER}\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.d_m, p.eta, p.regime.as_str());
    }
    s
}

pub fn filtercmp_csv(points: &[FilterCmpPoint]) -> String {
    let mut s = format!("{FILTERCMP_HEADER}\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.t_s, p.err_kf_norm, p.err_raw_norm);
    }
    s
}

/// One polyline of a chart.
pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Minimal fixed-size SVG line chart. Non-finite points are skipped.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 150.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let finite = || {
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite())
    };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in finite() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - L - R,
        H - T - B
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(xv),
            H - B + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            L - 6.0,
            py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        L + (W - L - R) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        T + (H - T - B) / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            ser.color,
            pts.join(" ")
        );
        let ly = T + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            W - R + 10.0,
            W - R + 30.0,
            ser.color,
            W - R + 36.0,
            ly + 4.0,
            escape(ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e5) {
        format!("{v:.1e}")
    } else {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_owned()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Runs one experiment and renders its files (CSV first, then the optional
/// plot).
pub fn run_experiment(experiment: Experiment, scenario: &Scenario, plot: bool) -> Result<Vec<OutputFile>, SimError> {
    scenario.validate()?;
    let (csv, svg) = match experiment {
        Experiment::Track => {
            let recs = run_tracking(scenario)?;
            let svg = plot.then(|| {
                let pick = |f: fn(&TickRecord) -> Option<(f64, f64)>| recs.iter().filter_map(f).collect();
                svg_line_chart(
                    "Trajectory",
                    "x (cm)",
                    "y (cm)",
                    &[
                        Series {
                            name: "truth",
                            color: "black",
                            points: pick(|r| Some((r.truth.x, r.truth.y))),
                        },
                        Series {
                            name: "raw",
                            color: "#d62728",
                            points: pick(|r| r.raw_estimate.map(|p| (p.x, p.y))),
                        },
                        Series {
                            name: "filtered",
                            color: "#1f77b4",
                            points: pick(|r| r.filtered_estimate.map(|p| (p.x, p.y))),
                        },
                    ],
                )
            });
            (track_csv(&recs), svg)
        }
        Experiment::Ber => {
            let pts = run_ber_sweep(&scenario.ber.grid(), scenario.ber.n_bits, scenario.seed)?;
            let svg = plot.then(|| {
                let log = |v: f64| if v > 0.0 { v.log10() } else { f64::NAN };
                svg_line_chart(
                    "OOK bit error rate",
                    "SNIR (dB)",
                    "log10 BER",
                    &[
                        Series {
                            name: "simulated",
                            color: "#d62728",
                            points: pts.iter().map(|p| (p.snir_db, log(p.ber_sim))).collect(),
                        },
                        Series {
                            name: "theory",
                            color: "black",
                            points: pts.iter().map(|p| (p.snir_db, log(p.ber_theory))).collect(),
                        },
                    ],
                )
            });
            (ber_csv(&pts), svg)
        }
        Experiment::Range => {
            let pts = run_scenario_range_sweep(scenario)?;
            let svg = plot.then(|| {
                svg_line_chart(
                    "Fixture pixel count",
                    "distance (m)",
                    "log10 pixels",
                    &[Series {
                        name: "eta",
                        color: "#1f77b4",
                        points: pts.iter().map(|p| (p.d_m, p.eta.log10())).collect(),
                    }],
                )
            });
            (range_csv(&pts), svg)
        }
        Experiment::Filtercmp => {
            let pts = run_filter_comparison(scenario)?;
            let svg = plot.then(|| {
                svg_line_chart(
                    "Normalised prediction error",
                    "t (s)",
                    "error / initial",
                    &[
                        Series {
                            name: "with filter",
                            color: "#1f77b4",
                            points: pts.iter().map(|p| (p.t_s, p.err_kf_norm)).collect(),
                        },
                        Series {
                            name: "without",
                            color: "#d62728",
                            points: pts.iter().map(|p| (p.t_s, p.err_raw_norm)).collect(),
                        },
                    ],
                )
            });
            (filtercmp_csv(&pts), svg)
        }
    };
    let mut files = vec![OutputFile {
        name: experiment.csv_name(),
        contents: csv,
    }];
    if let Some(svg) = svg {
        files.push(OutputFile {
            name: format!("{}.svg", experiment.as_str()),
            contents: svg,
        });
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestOutput {
    pub file: String,
    pub bytes: usize,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub experiment: Experiment,
    pub seed: u64,
    pub plot: bool,
    pub scenario: Scenario,
    pub outputs: Vec<ManifestOutput>,
}

impl Manifest {
    pub fn new(experiment: Experiment, scenario: &Scenario, plot: bool, files: &[OutputFile]) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            tool: env!("CARGO_PKG_NAME").to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            experiment,
            seed: scenario.seed,
            plot,
            scenario: scenario.clone(),
            outputs: files
                .iter()
                .map(|f| ManifestOutput {
                    file: f.name.clone(),
                    bytes: f.contents.len(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_owned(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if m.manifest_version != MANIFEST_VERSION {
            return Err(ConfigError::Invalid {
                field: "manifest_version".into(),
                message: format!("unsupported version {}", m.manifest_version),
            });
        }
        if m.seed != m.scenario.seed {
            return Err(ConfigError::Invalid {
                field: "seed".into(),
                message: "disagrees with scenario.seed".into(),
            });
        }
        Ok(m)
    }

    /// Re-runs the recorded experiment.
    pub fn replay(&self) -> Result<Vec<OutputFile>, SimError> {
        run_experiment(self.experiment, &self.scenario, self.plot)
    }
}

/// Writes the experiment files plus `manifest.json` and
/// `scenario.resolved.json` into `dir`, creating it if needed.
pub fn write_run(dir: &Path, manifest: &Manifest, files: &[OutputFile]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for f in files {
        std::fs::write(dir.join(&f.name), &f.contents)?;
    }
    std::fs::write(dir.join(RESOLVED_SCENARIO_FILE), manifest.scenario.to_json() + "\n")?;
    std::fs::write(dir.join(MANIFEST_FILE), manifest.to_json() + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        let mut s = Scenario::default();
        s.duration_s = 5.0;
        s.ensemble.members = 3;
        s.ber.n_bits = 10_000;
        s.ber.snir_db_max = 2.0;
        s.range.d_max_m = 5.0;
        s
    }

    #[test]
    fn golden_headers() {
        let s = small();
        for (exp, header) in [
            (Experiment::Track, TRACK_HEADER),
            (Experiment::Ber, BER_HEADER),
            (Experiment::Range, RANGE_HEADER),
            (Experiment::Filtercmp, FILTERCMP_HEADER),
        ] {
            let files = run_experiment(exp, &s, false).unwrap();
            assert_eq!(files.len(), 1);
            let first = files[0].contents.lines().next().unwrap();
            assert_eq!(first, header);
            let cols = header.split(',').count();
            for line in files[0].contents.lines() {
                assert_eq!(line.split(',').count(), cols, "{line}");
            }
        }
        assert_eq!(
            TRACK_HEADER,
            "t_s,true_x,true_y,raw_x,raw_y,kf_x,kf_y,raw_err,kf_err,visible"
        );
    }

    #[test]
    fn cold_start_row_has_empty_filter_fields() {
        let files = run_experiment(Experiment::Track, &small(), false).unwrap();
        let row1: Vec<&str> = files[0].contents.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row1[5], "");
        assert_eq!(row1[8], "");
        assert!(!row1[3].is_empty());
    }

    #[test]
    fn manifest_replay_is_byte_identical() {
        let s = small();
        for exp in [Experiment::Track, Experiment::Ber, Experiment::Range, Experiment::Filtercmp] {
            let files = run_experiment(exp, &s, true).unwrap();
            let m = Manifest::new(exp, &s, true, &files);
            let parsed = Manifest::from_json(&m.to_json(), "m").unwrap();
            assert_eq!(parsed, m);
            assert_eq!(parsed.replay().unwrap(), files);
        }
    }

    #[test]
    fn write_run_layout() {
        let dir = tempfile::tempdir().unwrap();
        let s = small();
        let files = run_experiment(Experiment::Range, &s, true).unwrap();
        let m = Manifest::new(Experiment::Range, &s, true, &files);
        write_run(dir.path(), &m, &files).unwrap();
        for name in ["range.csv", "range.svg", MANIFEST_FILE, RESOLVED_SCENARIO_FILE] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        let resolved = std::fs::read_to_string(dir.path().join(RESOLVED_SCENARIO_FILE)).unwrap();
        assert_eq!(Scenario::from_json(&resolved, "r").unwrap(), s);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = svg_line_chart(
            "a < b",
            "x",
            "y",
            &[Series {
                name: "s",
                color: "red",
                points: vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 3.0)],
            }],
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert!(!svg.contains("NaN"));
    }
}
