//! ON/OFF stimulation patterns over the crank angle: extraction from a policy,
//! mirroring to the left leg, perturbation, open-loop control and comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::biomech::{MuscleName, Side, SimState};
use crate::env::{make_observation, Observation};
use crate::error::{Error, Result};
use crate::rl::Actor;

/// Largest perturbation magnitude accepted, in degrees.
pub const MAX_PERTURBATION_DEG: f64 = 45.0;

const TOL: f64 = 1e-9;

/// Half-open arc `[on_deg, off_deg)` swept counter-clockwise. `on > off`
/// wraps through 0°; `[0, 360)` is the full circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub on_deg: f64,
    pub off_deg: f64,
}

impl Interval {
    pub fn new(on_deg: f64, off_deg: f64) -> Self {
        Self { on_deg, off_deg }
    }

    pub const FULL: Interval = Interval { on_deg: 0.0, off_deg: 360.0 };

    pub fn is_full(&self) -> bool {
        self.on_deg == 0.0 && self.off_deg == 360.0
    }

    pub fn wraps(&self) -> bool {
        self.on_deg > self.off_deg
    }

    pub fn arc(&self) -> f64 {
        if self.wraps() {
            360.0 - self.on_deg + self.off_deg
        } else {
            self.off_deg - self.on_deg
        }
    }

    pub fn contains(&self, deg: f64) -> bool {
        let x = wrap_deg(deg);
        if self.wraps() {
            x >= self.on_deg || x < self.off_deg
        } else {
            x >= self.on_deg && x < self.off_deg
        }
    }

    /// Non-wrapping pieces covering the same arc.
    fn pieces(&self) -> Vec<(f64, f64)> {
        if self.wraps() {
            vec![(self.on_deg, 360.0), (0.0, self.off_deg)]
        } else {
            vec![(self.on_deg, self.off_deg)]
        }
    }

    fn shifted(&self, by: f64) -> Self {
        if self.is_full() {
            *self
        } else {
            Self { on_deg: wrap_deg(self.on_deg + by), off_deg: wrap_deg(self.off_deg + by) }
        }
    }
}

/// Wraps degrees into `[0, 360)`, snapping values within 1e-9 of a whole
/// revolution to 0.
pub fn wrap_deg(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w >= 360.0 - TOL {
        0.0
    } else {
        w
    }
}

/// Signed difference `b − a` mapped into `(−180, 180]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternSource {
    ModelBased,
    FineTuned,
    Manual,
}

/// Right-leg stimulation pattern; the left leg runs it rotated by 180°.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulationPattern {
    pub source: PatternSource,
    /// One interval list per muscle, in [`MuscleName::for_count`] order.
    pub muscles: Vec<Vec<Interval>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternFile {
    source: PatternSource,
    n_muscles: usize,
    muscles: BTreeMap<String, Vec<Interval>>,
}

impl StimulationPattern {
    pub fn empty(n_muscles: usize, source: PatternSource) -> Self {
        Self { source, muscles: vec![Vec::new(); n_muscles] }
    }

    pub fn n_muscles(&self) -> usize {
        self.muscles.len()
    }

    pub fn names(&self) -> &'static [MuscleName] {
        MuscleName::for_count(self.n_muscles())
    }

    /// Total ON arc of muscle `i`, degrees.
    pub fn on_arc(&self, i: usize) -> f64 {
        self.muscles[i].iter().map(Interval::arc).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.n_muscles()) {
            return Err(Error::InvalidPattern(format!("{} muscles; expected 2 or 3", self.n_muscles())));
        }
        for (name, intervals) in self.names().iter().zip(&self.muscles) {
            let bad = |msg: String| Err(Error::InvalidPattern(format!("{name}: {msg}")));
            for iv in intervals {
                if iv.is_full() {
                    if intervals.len() > 1 {
                        return bad("full-circle interval must be the only one".into());
                    }
                    continue;
                }
                let in_range = |x: f64| (0.0..360.0).contains(&x);
                if !in_range(iv.on_deg) || !in_range(iv.off_deg) {
                    return bad(format!("[{}, {}) outside [0, 360)", iv.on_deg, iv.off_deg));
                }
                if iv.on_deg == iv.off_deg {
                    return bad(format!("[{}, {}) is empty", iv.on_deg, iv.off_deg));
                }
            }
            for pair in intervals.windows(2) {
                if pair[0].on_deg >= pair[1].on_deg {
                    return bad("intervals not sorted by ON angle".into());
                }
                if pair[0].wraps() || pair[0].off_deg > pair[1].on_deg {
                    return bad("intervals overlap".into());
                }
            }
            if let (Some(first), Some(last)) = (intervals.first(), intervals.last()) {
                if intervals.len() > 1 && last.wraps() && last.off_deg > first.on_deg {
                    return bad("intervals overlap".into());
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = PatternFile {
            source: self.source,
            n_muscles: self.n_muscles(),
            muscles: self.names().iter().map(|m| m.key().to_string()).zip(self.muscles.iter().cloned()).collect(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("pattern serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut file: PatternFile = serde_json::from_str(text)?;
        if !(2..=3).contains(&file.n_muscles) {
            return Err(Error::InvalidPattern(format!("n_muscles = {}", file.n_muscles)));
        }
        let mut muscles = Vec::new();
        for name in MuscleName::for_count(file.n_muscles) {
            let intervals = file
                .muscles
                .remove(name.key())
                .ok_or_else(|| Error::InvalidPattern(format!("missing muscle `{}`", name.key())))?;
            muscles.push(intervals);
        }
        if let Some(extra) = file.muscles.keys().next() {
            return Err(Error::InvalidPattern(format!("unexpected muscle `{extra}`")));
        }
        let p = Self { source: file.source, muscles };
        p.validate()?;
        Ok(p)
    }
}

fn sort_intervals(intervals: &mut [Interval]) {
    intervals.sort_by(|a, b| a.on_deg.total_cmp(&b.on_deg));
}

/// Union of circular arcs as a sorted, disjoint interval list.
fn normalize(intervals: Vec<Interval>) -> Vec<Interval> {
    if intervals.iter().any(Interval::is_full) || intervals.iter().map(Interval::arc).sum::<f64>() >= 360.0 - TOL {
        // may still leave gaps when arcs overlap; fall through to the exact merge below
        let covered: f64 = union_pieces(&intervals).iter().map(|(a, b)| b - a).sum();
        if covered >= 360.0 - TOL {
            return vec![Interval::FULL];
        }
    }
    let mut pieces = union_pieces(&intervals);
    if pieces.is_empty() {
        return Vec::new();
    }
    // join a piece ending at 360 with one starting at 0
    let mut out = Vec::new();
    let wrap = pieces.len() > 1 && pieces[0].0 <= TOL && pieces.last().unwrap().1 >= 360.0 - TOL;
    if wrap {
        let head = pieces.remove(0);
        let tail = pieces.pop().unwrap();
        for (a, b) in pieces {
            out.push(Interval::new(a, b));
        }
        out.push(Interval::new(tail.0, head.1));
    } else {
        for (a, b) in pieces {
            out.push(Interval::new(wrap_deg(a), if b >= 360.0 - TOL { 0.0 } else { b }));
        }
    }
    sort_intervals(&mut out);
    out
}

fn union_pieces(intervals: &[Interval]) -> Vec<(f64, f64)> {
    let mut pieces: Vec<(f64, f64)> = intervals.iter().flat_map(Interval::pieces).filter(|(a, b)| b > a).collect();
    pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in pieces {
        match merged.last_mut() {
            Some(last) if a <= last.1 + TOL => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    merged
}

/// Rotates every interval by 180°.
pub fn mirror_pattern(p: &StimulationPattern) -> StimulationPattern {
    let muscles = p
        .muscles
        .iter()
        .map(|ivs| {
            let mut out: Vec<Interval> = ivs.iter().map(|iv| iv.shifted(180.0)).collect();
            sort_intervals(&mut out);
            out
        })
        .collect();
    StimulationPattern { source: p.source, muscles }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Shrink,
    Extend,
    Rotate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuscleSelector {
    All,
    Only(MuscleName),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternPerturbation {
    pub kind: PerturbationKind,
    pub muscles: MuscleSelector,
    pub magnitude_deg: f64,
}

impl PatternPerturbation {
    pub fn identity() -> Self {
        Self { kind: PerturbationKind::Rotate, muscles: MuscleSelector::All, magnitude_deg: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.magnitude_deg.is_finite() || self.magnitude_deg.abs() > MAX_PERTURBATION_DEG {
            return Err(Error::InvalidArgument(format!(
                "perturbation of {} deg exceeds the {MAX_PERTURBATION_DEG} deg limit",
                self.magnitude_deg
            )));
        }
        if self.kind != PerturbationKind::Rotate && self.magnitude_deg < 0.0 {
            return Err(Error::InvalidArgument("shrink/extend magnitudes must be >= 0".into()));
        }
        Ok(())
    }
}

/// Shrink and extend move both ends by half the magnitude; rotate moves both
/// by the full magnitude.
pub fn perturb_pattern(p: &StimulationPattern, perturbation: &PatternPerturbation) -> Result<StimulationPattern> {
    perturbation.validate()?;
    let m = perturbation.magnitude_deg;
    let mut muscles = Vec::with_capacity(p.n_muscles());
    for (name, ivs) in p.names().iter().zip(&p.muscles) {
        let selected = match perturbation.muscles {
            MuscleSelector::All => true,
            MuscleSelector::Only(target) => target == *name,
        };
        if !selected || m == 0.0 {
            muscles.push(ivs.clone());
            continue;
        }
        let mut out = Vec::with_capacity(ivs.len());
        for iv in ivs {
            if iv.is_full() {
                match perturbation.kind {
                    PerturbationKind::Shrink => {
                        return Err(Error::InvalidPattern(format!("{name}: cannot shrink a full-circle interval")))
                    }
                    _ => {
                        out.push(*iv);
                        continue;
                    }
                }
            }
            let (on, off) = match perturbation.kind {
                PerturbationKind::Rotate => (iv.on_deg + m, iv.off_deg + m),
                PerturbationKind::Shrink => {
                    if m >= iv.arc() {
                        return Err(Error::DegenerateInterval { on_deg: iv.on_deg, off_deg: iv.off_deg });
                    }
                    (iv.on_deg + m / 2.0, iv.off_deg - m / 2.0)
                }
                PerturbationKind::Extend => {
                    if iv.arc() + m >= 360.0 {
                        out.push(Interval::FULL);
                        continue;
                    }
                    (iv.on_deg - m / 2.0, iv.off_deg + m / 2.0)
                }
            };
            out.push(Interval::new(wrap_deg(on), wrap_deg(off)));
        }
        muscles.push(normalize(out));
    }
    let out = StimulationPattern { source: p.source, muscles };
    out.validate()?;
    Ok(out)
}

/// Binary controls for one leg: muscle `i` is 1 when the leg's crank angle
/// lies in one of its ON intervals.
pub fn pattern_control(p: &StimulationPattern, crank_angle: f64, side: Side) -> Vec<f64> {
    // snap away radian round-off so grid angles land exactly on interval edges
    let deg = (side.phase(crank_angle).to_degrees() * 1e9).round() / 1e9;
    p.muscles
        .iter()
        .map(|ivs| if ivs.iter().any(|iv| iv.contains(deg)) { 1.0 } else { 0.0 })
        .collect()
}

/// Both legs' controls, right then left.
pub fn pattern_controls_both(p: &StimulationPattern, crank_angle: f64) -> Vec<f64> {
    let mut u = pattern_control(p, crank_angle, Side::Right);
    u.extend(pattern_control(p, crank_angle, Side::Left));
    u
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub resolution_deg: f64,
    /// rad/s
    pub reference_cadence: f64,
    pub threshold: f64,
    /// Gaps and islands shorter than this are removed, degrees.
    pub min_feature_deg: f64,
    /// Time between policy decisions, s; sets how far back `prev_action` is read.
    pub control_dt: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { resolution_deg: 1.0, reference_cadence: 5.0, threshold: 0.5, min_feature_deg: 5.0, control_dt: 0.05 }
    }
}

/// Share of grid points whose ON state may differ between the last two laps.
const MAX_LAP_DISAGREEMENT: f64 = 0.02;

/// Reads the deterministic policy around the crank circle at the reference
/// cadence. The previous action at grid point `θ` is the action taken at
/// `θ − cadence·dt`; three laps are swept so that this feedback settles, and
/// the third lap is thresholded.
pub fn extract_pattern_with<P>(policy: P, n_muscles: usize, opts: &ExtractOptions) -> Result<StimulationPattern>
where
    P: Fn(&Observation) -> Result<Vec<f64>>,
{
    let cells = grid_cells(opts.resolution_deg)?;
    let lag_deg = (opts.reference_cadence * opts.control_dt).to_degrees();
    let lag = ((lag_deg / opts.resolution_deg).round() as usize).min(cells - 1);
    let mut actions = vec![vec![0.0; n_muscles]; cells];
    let mut masks: Vec<Vec<Vec<bool>>> = Vec::new();
    for _lap in 0..3 {
        for i in 0..cells {
            let prev = if lag == 0 { actions[(i + cells - 1) % cells].clone() } else { actions[(i + cells - lag) % cells].clone() };
            let angle = (i as f64 * opts.resolution_deg).to_radians();
            let state = SimState { crank_angle: angle, cadence: opts.reference_cadence, activations: Vec::new(), sim_time: 0.0 };
            let a = policy(&make_observation(&state, &prev, Side::Right))?;
            if a.len() != n_muscles {
                return Err(Error::ShapeMismatch { expected: n_muscles, got: a.len() });
            }
            actions[i] = a;
        }
        masks.push((0..n_muscles).map(|m| actions.iter().map(|a| a[m] > opts.threshold).collect()).collect());
    }
    let (second, third) = (&masks[1], &masks[2]);
    let differing = (0..cells).filter(|&i| (0..n_muscles).any(|m| second[m][i] != third[m][i])).count();
    let disagreement = differing as f64 / cells as f64;
    if disagreement > MAX_LAP_DISAGREEMENT {
        return Err(Error::NonConvergentPrevAction { disagreement: 100.0 * disagreement });
    }
    let min_cells = (opts.min_feature_deg / opts.resolution_deg).ceil() as usize;
    let muscles = third.iter().map(|mask| mask_to_intervals(&clean_mask(mask, min_cells), opts.resolution_deg)).collect();
    Ok(StimulationPattern { source: PatternSource::ModelBased, muscles })
}

pub fn extract_pattern(actor: &Actor, opts: &ExtractOptions) -> Result<StimulationPattern> {
    extract_pattern_with(|o| actor.mean_action(&o.to_vec()), actor.n_actions(), opts)
}

fn grid_cells(resolution_deg: f64) -> Result<usize> {
    let cells = 360.0 / resolution_deg;
    if !(resolution_deg > 0.0) || (cells - cells.round()).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("resolution {resolution_deg} deg does not divide 360")));
    }
    Ok(cells.round() as usize)
}

/// Circular runs of equal value as `(start, len, value)`.
fn runs(mask: &[bool]) -> Vec<(usize, usize, bool)> {
    let n = mask.len();
    let Some(start) = (0..n).find(|&i| mask[i] != mask[(i + n - 1) % n]) else {
        return vec![(0, n, mask[0])];
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let s = (start + i) % n;
        let mut len = 1;
        while len < n - i && mask[(s + len) % n] == mask[s] {
            len += 1;
        }
        out.push((s, len, mask[s]));
        i += len;
    }
    out
}

/// Fills OFF gaps shorter than `min_cells`, then drops ON islands shorter than
/// `min_cells`.
fn clean_mask(mask: &[bool], min_cells: usize) -> Vec<bool> {
    let mut m = mask.to_vec();
    let n = m.len();
    for pass_value in [false, true] {
        let runs = runs(&m);
        if runs.len() == 1 {
            continue;
        }
        for (s, len, v) in runs {
            if v == pass_value && len < min_cells {
                for k in 0..len {
                    m[(s + k) % n] = !v;
                }
            }
        }
    }
    m
}

fn mask_to_intervals(mask: &[bool], resolution_deg: f64) -> Vec<Interval> {
    let n = mask.len();
    let runs = runs(mask);
    if runs.len() == 1 {
        return if runs[0].2 { vec![Interval::FULL] } else { Vec::new() };
    }
    let mut out: Vec<Interval> = runs
        .into_iter()
        .filter(|r| r.2)
        .map(|(s, len, _)| Interval::new(s as f64 * resolution_deg, ((s + len) % n) as f64 * resolution_deg))
        .collect();
    sort_intervals(&mut out);
    out
}

/// Per-muscle comparison of pattern `q` against reference `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuscleMetrics {
    pub muscle: MuscleName,
    pub on_arc_a: f64,
    pub on_arc_b: f64,
    pub on_off_a: Vec<Interval>,
    pub on_off_b: Vec<Interval>,
    pub overlap_deg: f64,
    /// Signed shift of the first ON angle, `b − a`, in `(−180, 180]`.
    pub on_offset_deg: Option<f64>,
    /// Signed shift of the first OFF angle.
    pub off_offset_deg: Option<f64>,
}

pub fn pattern_metrics(p: &StimulationPattern, q: &StimulationPattern) -> Result<Vec<MuscleMetrics>> {
    if p.n_muscles() != q.n_muscles() {
        return Err(Error::InvalidPattern(format!("muscle sets differ: {} vs {}", p.n_muscles(), q.n_muscles())));
    }
    Ok(p.names()
        .iter()
        .enumerate()
        .map(|(i, &muscle)| {
            let (a, b) = (&p.muscles[i], &q.muscles[i]);
            let overlap = a
                .iter()
                .flat_map(Interval::pieces)
                .map(|(a0, a1)| {
                    b.iter().flat_map(Interval::pieces).map(|(b0, b1)| (a1.min(b1) - a0.max(b0)).max(0.0)).sum::<f64>()
                })
                .sum();
            let first = |ivs: &[Interval]| ivs.iter().find(|iv| !iv.is_full()).copied();
            let (fa, fb) = (first(a), first(b));
            MuscleMetrics {
                muscle,
                on_arc_a: p.on_arc(i),
                on_arc_b: q.on_arc(i),
                on_off_a: a.clone(),
                on_off_b: b.clone(),
                overlap_deg: overlap,
                on_offset_deg: fa.zip(fb).map(|(x, y)| angle_diff(x.on_deg, y.on_deg)),
                off_offset_deg: fa.zip(fb).map(|(x, y)| angle_diff(x.off_deg, y.off_deg)),
            }
        })
        .collect())
}

/// Polar ring diagram: one ring per muscle, ON arcs filled, 0° at the right,
/// angles counter-clockwise.
pub fn pattern_svg(p: &StimulationPattern) -> String {
    let size = 400.0;
    let c = size / 2.0;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#);
    let colors = ["#d62728", "#1f77b4", "#2ca02c"];
    let point = |r: f64, deg: f64| {
        let t = deg.to_radians();
        (c + r * t.cos(), c - r * t.sin())
    };
    for (i, (name, ivs)) in p.names().iter().zip(&p.muscles).enumerate() {
        let r_in = 70.0 + 40.0 * i as f64;
        let r_out = r_in + 30.0;
        let _ = writeln!(
            svg,
            r##"  <circle cx="{c}" cy="{c}" r="{:.1}" fill="none" stroke="#cccccc" stroke-width="30"/>"##,
            (r_in + r_out) / 2.0
        );
        for iv in ivs {
            let arcs: Vec<(f64, f64)> =
                if iv.is_full() { vec![(0.0, 180.0), (180.0, 360.0)] } else { vec![(iv.on_deg, iv.on_deg + iv.arc())] };
            for (a0, a1) in arcs {
                let large = if a1 - a0 > 180.0 { 1 } else { 0 };
                let (x0, y0) = point(r_out, a0);
                let (x1, y1) = point(r_out, a1);
                let (x2, y2) = point(r_in, a1);
                let (x3, y3) = point(r_in, a0);
                let _ = writeln!(
                    svg,
                    r#"  <path d="M {x0:.2} {y0:.2} A {r_out} {r_out} 0 {large} 0 {x1:.2} {y1:.2} L {x2:.2} {y2:.2} A {r_in} {r_in} 0 {large} 1 {x3:.2} {y3:.2} Z" fill="{}"><title>{name} [{}, {})</title></path>"#,
                    colors[i % colors.len()],
                    iv.on_deg,
                    iv.off_deg
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"  <text x="{c}" y="{:.1}" font-size="11" text-anchor="middle">{name}</text>"#,
            c - r_out - 4.0 + 22.0
        );
    }
    for deg in (0..360).step_by(90) {
        let (x, y) = point(c - 12.0, deg as f64);
        let _ = writeln!(svg, r#"  <text x="{x:.1}" y="{y:.1}" font-size="11" text-anchor="middle">{deg}°</text>"#);
    }
    svg.push_str("</svg>\n");
    svg
}
