//! Experiment loops: tracking runs, filter comparison, BER and range sweeps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::channel::ook_ber_theoretical;
use crate::imaging::{
    distance_from_pixels, feasibility, observe_scene, pixel_count, FeasibilityRegime, ObserveOptions,
    RangingConstant,
};
use crate::model::{CameraModel, Luminaire, Point3};
use crate::modem::{add_awgn_with, count_bit_errors, decode_frame, demodulate, encode_frame, modulate};
use crate::server::{DetectionPacket, DetectionRecord, LightingServer, ServerConfig, ServerError};

use super::scenario::{ConfigError, Scenario};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Precondition(String),
    #[error("tick {tick}: {message}")]
    Pipeline { tick: usize, message: String },
}

/// Why a tick has no estimate, or why its estimate is incomplete.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TickFlag {
    Ok,
    /// First fix of the run: the filter has no history, so no filtered
    /// estimate is reported.
    ColdStart,
    /// Fewer than three LEDs could be used at this location.
    VisibilityGap { x_cm: f64, y_cm: f64, usable: usize },
    /// The server refused the packet.
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRecord {
    pub t_s: f64,
    pub truth: Point3,
    pub visible_count: usize,
    /// LEDs whose ID decoded and whose range could be formed.
    pub usable_count: usize,
    pub raw_estimate: Option<Point3>,
    pub filtered_estimate: Option<Point3>,
    /// Filter's one-step-ahead position, made at this tick.
    pub prediction: Option<Point3>,
    /// Horizontal errors, cm.
    pub raw_error_cm: Option<f64>,
    pub filtered_error_cm: Option<f64>,
    pub flag: TickFlag,
}

/// Per-tick measurement source shared by every run of a scenario.
struct Rig {
    luminaires: Vec<Luminaire>,
    tau: RangingConstant,
}

impl Rig {
    fn new(scenario: &Scenario) -> Result<Self, SimError> {
        let luminaires = scenario.luminaires()?;
        let first = luminaires
            .first()
            .ok_or_else(|| SimError::Precondition("scenario has no LEDs".into()))?;
        let tau = RangingConstant::new(&scenario.camera, first);
        Ok(Self { luminaires, tau })
    }
}

fn server_for(scenario: &Scenario) -> Result<LightingServer, SimError> {
    let mut tracker = scenario.tracker;
    tracker.nominal_dt_s = 1.0 / scenario.sampling_hz;
    let config = ServerConfig {
        room: scenario.room,
        tracker,
        probe_interval_ms: scenario.probe.interval_ms,
        probe_limit: scenario.probe.limit,
        ..ServerConfig::default()
    };
    Ok(LightingServer::new(scenario.registry()?, config))
}

/// Sends a luminaire's ID frame through the modem and returns what the
/// receiver decoded.
fn decode_led_id(
    lum: &Luminaire,
    scenario: &Scenario,
    rng: &mut ChaCha8Rng,
) -> Option<(u16, u16)> {
    let bits = encode_frame(lum.anchor.x as u32, lum.anchor.y as u32).ok()?;
    let spb = scenario.modem.samples_per_bit;
    match scenario.modem.id_snir_db {
        None => {
            let wave = modulate(&bits, spb, 1.0, 0.0).ok()?;
            decode_frame(&demodulate(&wave, spb, 0.5).ok()?).ok()
        }
        Some(db) => {
            let amp = 10f64.powf(db / 10.0).sqrt();
            let wave = modulate(&bits, spb, 2.0 * amp, 0.0).ok()?;
            let noisy = add_awgn_with(&wave, 1.0, rng).ok()?;
            decode_frame(&demodulate(&noisy, spb, amp).ok()?).ok()
        }
    }
}

fn horizontal_error(a: &Point3, truth: &Point3) -> f64 {
    a.horizontal_distance(truth)
}

/// One end-to-end tracking run: move, image, decode, range, ingest.
pub fn run_tracking(scenario: &Scenario) -> Result<Vec<TickRecord>, SimError> {
    scenario.validate()?;
    let rig = Rig::new(scenario)?;
    run_with_rig(scenario, &rig, scenario.seed)
}

fn run_with_rig(scenario: &Scenario, rig: &Rig, seed: u64) -> Result<Vec<TickRecord>, SimError> {
    let mut server = server_for(scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range_noise = Normal::new(0.0, scenario.noise.distance_sigma_cm)
        .map_err(|e| SimError::Precondition(e.to_string()))?;
    let options = ObserveOptions {
        noise_sigma_pixels: scenario.noise.pixel_sigma,
        quantize: scenario.noise.quantize_pixels,
    };
    let by_id = |id: u32| rig.luminaires.get(id as usize);

    let mut out = Vec::with_capacity(scenario.ticks());
    for k in 0..scenario.ticks() {
        let t_s = scenario.tick_time_s(k);
        let pose = scenario.pose_at(t_s);
        let truth = pose.position;
        let observations = observe_scene(&rig.luminaires, &pose, &scenario.camera, options, &mut rng)
            .map_err(|e| SimError::Pipeline {
                tick: k,
                message: e.to_string(),
            })?;

        let mut records = Vec::with_capacity(observations.len());
        for obs in &observations {
            let lum = by_id(obs.led_id).expect("observation of a known luminaire");
            let Some((x_cm, y_cm)) = decode_led_id(lum, scenario, &mut rng) else {
                continue;
            };
            let Ok(mut d_mm) = distance_from_pixels(rig.tau, obs.pixel_count) else {
                continue;
            };
            if scenario.noise.distance_sigma_cm > 0.0 {
                d_mm += 10.0 * range_noise.sample(&mut rng);
            }
            if d_mm > 0.0 {
                records.push(DetectionRecord { x_cm, y_cm, distance_mm: d_mm });
            }
        }

        let mut rec = TickRecord {
            t_s,
            truth,
            visible_count: observations.len(),
            usable_count: records.len(),
            raw_estimate: None,
            filtered_estimate: None,
            prediction: None,
            raw_error_cm: None,
            filtered_error_cm: None,
            flag: TickFlag::Ok,
        };
        let packet = DetectionPacket {
            session_id: "sim".into(),
            timestamp_ms: (t_s * 1000.0).round() as u64,
            records,
        };
        match server.ingest(&packet) {
            Ok(outcome) => {
                let first = server.session("sim").is_some_and(|s| s.history.len() == 1);
                rec.raw_estimate = Some(outcome.estimate.position);
                rec.raw_error_cm = Some(horizontal_error(&outcome.estimate.position, &truth));
                rec.prediction = Some(outcome.prediction);
                if first {
                    rec.flag = TickFlag::ColdStart;
                } else {
                    rec.filtered_estimate = Some(outcome.filtered);
                    rec.filtered_error_cm = Some(horizontal_error(&outcome.filtered, &truth));
                }
            }
            Err(ServerError::InsufficientAnchors { .. } | ServerError::EmptyPacket) => {
                rec.flag = TickFlag::VisibilityGap {
                    x_cm: truth.x,
                    y_cm: truth.y,
                    usable: packet.records.len(),
                };
            }
            Err(e) => {
                rec.flag = TickFlag::Rejected { reason: e.to_string() };
            }
        }
        out.push(rec);
    }
    Ok(out)
}

fn member_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// `members` independent runs with seeds `seed, seed + 1, ...`, returned in
/// seed order.
pub fn run_ensemble(scenario: &Scenario, members: usize) -> Result<Vec<Vec<TickRecord>>, SimError> {
    scenario.validate()?;
    let rig = Rig::new(scenario)?;
    (0..members)
        .into_par_iter()
        .map(|i| run_with_rig(scenario, &rig, member_seed(scenario.seed, i)))
        .collect()
}

/// Ensemble error summary after the filter has settled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingSummary {
    pub members: usize,
    pub from_tick: usize,
    pub filtered_rms_cm: f64,
    pub raw_rms_cm: f64,
    pub mean_filtered_spacing_cm: f64,
    pub gap_ticks: usize,
}

/// RMS errors and mean consecutive filtered spacing over ticks `>= from_tick`.
pub fn summarize(runs: &[Vec<TickRecord>], from_tick: usize) -> TrackingSummary {
    let (mut fs, mut fn_, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    let (mut sp, mut spn) = (0.0, 0usize);
    let mut gaps = 0;
    for run in runs {
        for (k, rec) in run.iter().enumerate() {
            if matches!(rec.flag, TickFlag::VisibilityGap { .. }) {
                gaps += 1;
            }
            if k < from_tick {
                continue;
            }
            if let Some(e) = rec.filtered_error_cm {
                fs += e * e;
                fn_ += 1;
            }
            if let Some(e) = rec.raw_error_cm {
                rs += e * e;
                rn += 1;
            }
            if k > from_tick {
                if let (Some(a), Some(b)) = (run[k - 1].filtered_estimate, rec.filtered_estimate) {
                    sp += a.horizontal_distance(&b);
                    spn += 1;
                }
            }
        }
    }
    let rms = |s: f64, n: usize| if n == 0 { f64::NAN } else { (s / n as f64).sqrt() };
    TrackingSummary {
        members: runs.len(),
        from_tick,
        filtered_rms_cm: rms(fs, fn_),
        raw_rms_cm: rms(rs, rn),
        mean_filtered_spacing_cm: if spn == 0 { f64::NAN } else { sp / spn as f64 },
        gap_ticks: gaps,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterCmpPoint {
    pub t_s: f64,
    pub err_kf_norm: f64,
    pub err_raw_norm: f64,
}

/// The scenario the filter comparison actually runs: the tracking scenario
/// with its motion and duration taken from the `filtercmp` section.
pub fn filter_comparison_scenario(scenario: &Scenario) -> Scenario {
    let mut s = scenario.clone();
    s.trajectory = scenario.filtercmp.trajectory.clone();
    s.duration_s = scenario.filtercmp.duration_s;
    s
}

/// Position error at the moment a fix is used, with and without the filter.
///
/// A fix computed at tick `k` is acted on until tick `k + 1`. Without the
/// filter the best guess for tick `k + 1` is the raw fix itself; with it, the
/// filter's one-step prediction. Row `j` compares both guesses made at tick
/// `j` against the truth at tick `j + 1`. At `j = 0` the filter has no
/// velocity yet, so both guesses coincide. Each curve is the ensemble mean
/// divided by that common first value.
pub fn run_filter_comparison(scenario: &Scenario) -> Result<Vec<FilterCmpPoint>, SimError> {
    let s = filter_comparison_scenario(scenario);
    if !(s.noise.pixel_sigma > 0.0 || s.noise.distance_sigma_cm > 0.0) {
        return Err(SimError::Precondition("filter comparison needs pixel or distance noise".into()));
    }
    let runs = run_ensemble(&s, s.ensemble.members)?;
    let ticks = s.ticks();
    if ticks < 2 {
        return Err(SimError::Precondition("filter comparison needs at least two ticks".into()));
    }
    let mut kf = vec![(0.0, 0usize); ticks - 1];
    let mut raw = vec![(0.0, 0usize); ticks - 1];
    for run in &runs {
        for j in 0..ticks - 1 {
            let truth = &run[j + 1].truth;
            if let Some(p) = run[j].prediction {
                kf[j].0 += p.horizontal_distance(truth);
                kf[j].1 += 1;
            }
            if let Some(r) = run[j].raw_estimate {
                raw[j].0 += r.horizontal_distance(truth);
                raw[j].1 += 1;
            }
        }
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
    let base = mean(raw[0]);
    if !(base > 0.0) {
        return Err(SimError::Precondition("first-delivery error is zero; nothing to normalise".into()));
    }
    Ok((0..ticks - 1)
        .map(|j| FilterCmpPoint {
            t_s: s.tick_time_s(j),
            err_kf_norm: mean(kf[j]) / base,
            err_raw_norm: mean(raw[j]) / base,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerPoint {
    pub snir_db: f64,
    pub ber_sim: f64,
    pub ber_theory: f64,
    pub n_bits: usize,
}

impl BerPoint {
    /// Binomial standard deviation of the simulated rate around theory.
    pub fn sigma(&self) -> f64 {
        (self.ber_theory * (1.0 - self.ber_theory) / self.n_bits as f64).sqrt()
    }
}

/// Monte-Carlo OOK BER against `Q(sqrt(SNIR))`; point `i` uses `seed + i`.
pub fn run_ber_sweep(snir_db_grid: &[f64], n_bits: usize, seed: u64) -> Result<Vec<BerPoint>, SimError> {
    if n_bits < crate::modem::MIN_BER_BITS {
        return Err(SimError::Precondition(format!(
            "n_bits must be at least {}, got {n_bits}",
            crate::modem::MIN_BER_BITS
        )));
    }
    snir_db_grid
        .par_iter()
        .enumerate()
        .map(|(i, &db)| {
            let snir = 10f64.powf(db / 10.0);
            let errors = count_bit_errors(snir, n_bits, member_seed(seed, i))
                .map_err(|e| SimError::Precondition(e.to_string()))?;
            let theory = ook_ber_theoretical(snir).map_err(|e| SimError::Precondition(e.to_string()))?;
            Ok(BerPoint {
                snir_db: db,
                ber_sim: errors as f64 / n_bits as f64,
                ber_theory: theory,
                n_bits,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangePoint {
    pub d_m: f64,
    pub eta: f64,
    pub regime: FeasibilityRegime,
}

/// Pixel count and feasibility regime along an ascending distance grid.
pub fn run_range_sweep(
    camera: &CameraModel,
    luminaire: &Luminaire,
    d_grid_m: &[f64],
) -> Result<Vec<RangePoint>, SimError> {
    if d_grid_m.windows(2).any(|w| w[1] < w[0]) {
        return Err(SimError::Precondition("distance grid must be ascending".into()));
    }
    d_grid_m
        .iter()
        .map(|&d_m| {
            let eta = pixel_count(camera, luminaire, d_m * 100.0).map_err(|e| SimError::Precondition(e.to_string()))?;
            Ok(RangePoint {
                d_m,
                eta,
                regime: feasibility(eta),
            })
        })
        .collect()
}

/// Range sweep for the scenario's camera and fixture over its distance grid.
pub fn run_scenario_range_sweep(scenario: &Scenario) -> Result<Vec<RangePoint>, SimError> {
    let lums = scenario.luminaires()?;
    let lum = lums
        .first()
        .ok_or_else(|| SimError::Precondition("scenario has no LEDs".into()))?;
    run_range_sweep(&scenario.camera, lum, &scenario.range.grid())
}
