//! Sum-of-sinusoids excitation trajectories labelled with oracle torques.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{inverse_dynamics, GroundTruthModel};
use crate::dataset::{TrajectoryDataset, TrajectorySample};
use crate::lagrangian::GeneralizedState;
use crate::math::{cos, sin, PI};
use crate::topology::BASE_DOF;
use crate::{Error, Result};

/// Excitation settings. Ranges are `(low, high)` with uniform sampling;
/// amplitudes in rad or m, frequencies in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSpec {
    pub duration: f64,
    pub rate: f64,
    /// Sinusoids per coordinate.
    pub harmonics: usize,
    pub joint_amplitude: (f64, f64),
    pub joint_frequency: (f64, f64),
    pub base_translation_amplitude: (f64, f64),
    pub base_rotation_amplitude: (f64, f64),
    pub base_frequency: (f64, f64),
    /// Bound on the summed pitch amplitude (rad).
    pub max_pitch: f64,
    pub seed: u64,
}

impl Default for ExcitationSpec {
    fn default() -> Self {
        ExcitationSpec {
            duration: 10.0,
            rate: 100.0,
            harmonics: 3,
            joint_amplitude: (0.05, 0.3),
            joint_frequency: (0.1, 1.0),
            base_translation_amplitude: (0.01, 0.08),
            base_rotation_amplitude: (0.02, 0.12),
            base_frequency: (0.1, 0.5),
            max_pitch: 0.4,
            seed: 0,
        }
    }
}

impl ExcitationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidSpec(what.into()));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return bad("rate must be positive");
        }
        if self.harmonics == 0 {
            return bad("at least one harmonic is required");
        }
        if !(self.max_pitch > 0.0 && self.max_pitch < 1.4) {
            return bad("pitch bound must lie in (0, 1.4) rad");
        }
        for (name, (lo, hi)) in [
            ("joint amplitude", self.joint_amplitude),
            ("joint frequency", self.joint_frequency),
            ("base translation amplitude", self.base_translation_amplitude),
            ("base rotation amplitude", self.base_rotation_amplitude),
            ("base frequency", self.base_frequency),
        ] {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidSpec(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        if self.sample_count() == 0 {
            return bad("duration and rate give no samples");
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        libm::round(self.duration * self.rate) as usize
    }
}

struct Signal {
    offset: f64,
    /// (amplitude, angular frequency, phase)
    terms: Vec<(f64, f64, f64)>,
}

impl Signal {
    fn draw(rng: &mut ChaCha8Rng, offset: f64, n: usize, amp: (f64, f64), freq: (f64, f64)) -> Signal {
        let mut uni = |r: (f64, f64)| if r.1 > r.0 { rng.gen_range(r.0..r.1) } else { r.0 };
        let terms = (0..n).map(|_| (uni(amp), 2.0 * PI * uni(freq), uni((0.0, 2.0 * PI)))).collect();
        Signal { offset, terms }
    }

    fn scale_to(&mut self, bound: f64) {
        let total: f64 = self.terms.iter().map(|t| t.0).sum();
        if total > bound {
            let k = bound / total;
            self.terms.iter_mut().for_each(|t| t.0 *= k);
        }
    }

    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let mut out = (self.offset, 0.0, 0.0);
        for &(a, w, p) in &self.terms {
            let (s, c) = (sin(w * t + p), cos(w * t + p));
            out.0 += a * s;
            out.1 += a * w * c;
            out.2 -= a * w * w * s;
        }
        out
    }
}

/// Samples an excitation trajectory and labels it with oracle torques.
/// Deterministic given `spec.seed`.
pub fn generate_excitation(model: &GroundTruthModel, spec: &ExcitationSpec) -> Result<TrajectoryDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = spec.harmonics;
    let mut signals = Vec::with_capacity(model.dim());
    for _ in 0..3 {
        signals.push(Signal::draw(&mut rng, 0.0, h, spec.base_translation_amplitude, spec.base_frequency));
    }
    for axis in 0..3 {
        let offset = if axis == 2 { rng.gen_range(-PI..PI) } else { 0.0 };
        let mut s = Signal::draw(&mut rng, offset, h, spec.base_rotation_amplitude, spec.base_frequency);
        if axis == 1 {
            s.scale_to(spec.max_pitch);
        }
        signals.push(s);
    }
    for _ in 0..model.n_q() {
        let offset = rng.gen_range(-0.3..0.3);
        signals.push(Signal::draw(&mut rng, offset, h, spec.joint_amplitude, spec.joint_frequency));
    }
    debug_assert_eq!(signals.len(), BASE_DOF + model.n_q());
    let mut data = TrajectoryDataset::new(model.n_q(), spec.rate);
    for k in 0..spec.sample_count() {
        let t = k as f64 / spec.rate;
        let (mut nu, mut nu_dot, mut nu_ddot) = (Vec::new(), Vec::new(), Vec::new());
        for s in &signals {
            let (x, v, a) = s.eval(t);
            nu.push(x);
            nu_dot.push(v);
            nu_ddot.push(a);
        }
        let state = GeneralizedState::new(nu, nu_dot, nu_ddot)?;
        let tau = inverse_dynamics(model, &state)?;
        data.push(&TrajectorySample { state, tau })?;
    }
    Ok(data)
}
