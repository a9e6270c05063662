use crate::error::{Error, Result};
use crate::numerics::{Container, NamedArray, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GammaMode {
    Deterministic,
    /// Variance of the Markovian chain restricted to the sub-sequence.
    DdpmMatching,
}

impl GammaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GammaMode::Deterministic => "deterministic",
            GammaMode::DdpmMatching => "ddpm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "deterministic" | "0" | "zero" => Ok(GammaMode::Deterministic),
            "ddpm" | "ddpm-matching" => Ok(GammaMode::DdpmMatching),
            other => Err(Error::Config(format!("unknown gamma mode {other:?}"))),
        }
    }
}

/// Noise schedule and sampling sub-sequence.
///
/// `alpha[k]` is the cumulative product of `1 - beta` up to step k, with
/// `alpha[0] = 1`. `tau` is the strictly increasing sub-sequence of `1..=K`
/// visited by the sampler; `gamma[i]` is the noise scale of the transition
/// from `tau[i]` down to `tau[i-1]` (or 0 for i = 0).
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub betas: Vec<f64>,
    pub alpha: Vec<f64>,
    pub tau: Vec<usize>,
    pub gamma: Vec<f64>,
    pub mode: GammaMode,
}

pub fn build_schedule(k: usize, beta_start: f64, beta_end: f64, s: usize, mode: GammaMode) -> Result<Schedule> {
    if k == 0 {
        return Err(Error::Invalid("K must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Invalid(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..k)
        .map(|i| {
            if k == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (k - 1) as f64
            }
        })
        .collect();
    let mut alpha = Vec::with_capacity(k + 1);
    alpha.push(1.0);
    for b in &betas {
        let prev = *alpha.last().expect("non-empty");
        alpha.push(prev * (1.0 - b));
    }
    let mut sched = Schedule {
        betas,
        alpha,
        tau: Vec::new(),
        gamma: Vec::new(),
        mode,
    };
    sched.set_steps(s, mode)?;
    Ok(sched)
}

impl Schedule {
    pub fn total_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn sampling_steps(&self) -> usize {
        self.tau.len()
    }

    /// Re-derives `tau` and `gamma` for `s` evenly spaced steps ending at K.
    pub fn set_steps(&mut self, s: usize, mode: GammaMode) -> Result<()> {
        let k = self.total_steps();
        if s == 0 || s > k {
            return Err(Error::Invalid(format!("sampling steps must be in 1..={k}, got {s}")));
        }
        self.tau = (1..=s).map(|i| i * k / s).collect();
        self.mode = mode;
        self.gamma = (0..s)
            .map(|i| {
                let to = if i == 0 { 0 } else { self.tau[i - 1] };
                self.gamma_for(self.tau[i], to)
            })
            .collect();
        Ok(())
    }

    pub fn with_steps(&self, s: usize, mode: GammaMode) -> Result<Self> {
        let mut out = self.clone();
        out.set_steps(s, mode)?;
        Ok(out)
    }

    /// Noise scale of a `k_from -> k_to` transition under the current mode.
    pub fn gamma_for(&self, k_from: usize, k_to: usize) -> f64 {
        match self.mode {
            GammaMode::Deterministic => 0.0,
            GammaMode::DdpmMatching => {
                let (af, at) = (self.alpha[k_from], self.alpha[k_to]);
                ((1.0 - at) / (1.0 - af) * (1.0 - af / at)).max(0.0).sqrt()
            }
        }
    }

    /// Consecutive `(k_from, k_to, gamma)` transitions from K down to 0.
    pub fn transitions(&self) -> Vec<(usize, usize, f64)> {
        (0..self.tau.len())
            .rev()
            .map(|i| {
                let to = if i == 0 { 0 } else { self.tau[i - 1] };
                (self.tau[i], to, self.gamma[i])
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.total_steps();
        let ok = self.alpha.len() == k + 1
            && self.alpha[0] == 1.0
            && self.alpha.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0)
            && !self.tau.is_empty()
            && self.tau.windows(2).all(|w| w[1] > w[0])
            && self.tau[0] >= 1
            && *self.tau.last().expect("non-empty") == k
            && self.gamma.len() == self.tau.len()
            && self.transitions().iter().all(|&(_, to, g)| g * g <= 1.0 - self.alpha[to] + 1e-12);
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid("schedule violates its invariants".into()))
        }
    }

    pub fn write_to(&self, c: &mut Container) -> Result<()> {
        c.set_meta("schedule.k", self.total_steps());
        c.set_meta("schedule.s", self.sampling_steps());
        c.set_meta("schedule.gamma", self.mode.as_str());
        c.push(NamedArray::from_f64("schedule.betas", vec![self.betas.len()], &self.betas))?;
        c.push(NamedArray::from_f64("schedule.alpha", vec![self.alpha.len()], &self.alpha))
    }

    pub fn read_from(c: &Container) -> Result<Self> {
        let betas = c.get("schedule.betas")?.to_f64_vec()?;
        let alpha = c.get("schedule.alpha")?.to_f64_vec()?;
        let mut s = Schedule {
            betas,
            alpha,
            tau: Vec::new(),
            gamma: Vec::new(),
            mode: GammaMode::Deterministic,
        };
        if s.alpha.len() != s.betas.len() + 1 || s.betas.is_empty() {
            return Err(Error::Format("schedule arrays disagree in length".into()));
        }
        let steps: usize = c.meta_parse("schedule.s")?;
        s.set_steps(steps, GammaMode::parse(c.meta("schedule.gamma")?)?)?;
        s.validate().map_err(|_| Error::Format("stored schedule is invalid".into()))?;
        Ok(s)
    }
}

/// `sqrt(alpha[k]) * y0 + sqrt(1 - alpha[k]) * eps`.
pub fn forward_marginal(y0: &Tensor<f32>, k: usize, eps: &Tensor<f32>, sched: &Schedule) -> Result<Tensor<f32>> {
    if y0.shape() != eps.shape() {
        return Err(Error::shape("forward_marginal", format!("{:?} vs {:?}", y0.shape(), eps.shape())));
    }
    let a = *sched
        .alpha
        .get(k)
        .ok_or_else(|| Error::Invalid(format!("step {k} beyond K = {}", sched.total_steps())))?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let data = y0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&y, &e)| (sa * y as f64 + sn * e as f64) as f32)
        .collect();
    Tensor::new(y0.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_products() {
        let s = build_schedule(100, 1e-4, 0.05, 100, GammaMode::Deterministic).unwrap();
        assert!(s.alpha.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha[100] < 0.1);
        let mut p = 1.0;
        for (i, b) in s.betas.iter().enumerate() {
            p *= 1.0 - b;
            assert!((s.alpha[i + 1] - p).abs() < 1e-15);
        }
        assert_eq!(s.tau, (1..=100).collect::<Vec<_>>());
        s.validate().unwrap();
        let d = build_schedule(200, 1e-4, 0.05, 100, GammaMode::Deterministic).unwrap();
        assert!(d.alpha[200] < 0.05);
    }

    #[test]
    fn single_step() {
        let s = build_schedule(1, 0.5, 0.5, 1, GammaMode::Deterministic).unwrap();
        assert_eq!(s.alpha, vec![1.0, 0.5]);
        assert_eq!(s.tau, vec![1]);
    }

    #[test]
    fn evenly_spaced_tau() {
        let s = build_schedule(200, 1e-4, 0.05, 10, GammaMode::DdpmMatching).unwrap();
        assert_eq!(s.tau, vec![20, 40, 60, 80, 100, 120, 140, 160, 180, 200]);
        s.validate().unwrap();
        assert_eq!(s.gamma[0], 0.0);
        assert!(s.gamma[1..].iter().all(|&g| g > 0.0));
        let t = build_schedule(200, 1e-4, 0.05, 3, GammaMode::Deterministic).unwrap();
        assert_eq!(t.tau, vec![66, 133, 200]);
        assert!(build_schedule(10, 1e-4, 0.05, 11, GammaMode::Deterministic).is_err());
        assert!(build_schedule(10, 0.05, 1e-4, 5, GammaMode::Deterministic).is_err());
    }

    #[test]
    fn marginal_examples() {
        let s = build_schedule(1, 0.75, 0.75, 1, GammaMode::Deterministic).unwrap();
        let y0 = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let eps = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
        assert_eq!(forward_marginal(&y0, 0, &eps, &s).unwrap(), y0);
        let v = forward_marginal(&y0, 1, &eps, &s).unwrap();
        assert!((v.data()[0] - 1.3660).abs() < 1e-4 && (v.data()[1] - 0.1340).abs() < 1e-4);
        assert!(forward_marginal(&y0, 2, &eps, &s).is_err());
    }

    #[test]
    fn container_round_trip() {
        let s = build_schedule(50, 1e-4, 0.05, 25, GammaMode::DdpmMatching).unwrap();
        let mut c = Container::new();
        s.write_to(&mut c).unwrap();
        let back = Schedule::read_from(&Container::decode(&c.encode()).unwrap()).unwrap();
        assert_eq!(s, back);
    }
}
