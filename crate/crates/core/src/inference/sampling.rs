use std::fmt;

use rand::Rng;

use super::metrics::{ade, Path2};
use crate::data::{cumulate, SceneWindow};
use crate::diffusion::{reverse_generate, Schedule};
use crate::distribution::{log_pdf, sample_location, StatsField};
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// `r1` reverse runs, pick one, then `r2` Gaussian draws from it.
    A { r1: usize, r2: usize },
    /// `r` reverse runs with one draw each.
    B { r: usize },
    /// One reverse run with `r` draws.
    C { r: usize },
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Strategy::A { r1, .. } => r1 >= 1,
            Strategy::B { r } | Strategy::C { r } => r >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("strategy {self} needs at least one run and one candidate")))
        }
    }

    pub fn reverse_runs(&self) -> usize {
        match *self {
            Strategy::A { r1, .. } => r1,
            Strategy::B { r } => r,
            Strategy::C { .. } => 1,
        }
    }

    pub fn letter(&self) -> char {
        match self {
            Strategy::A { .. } => 'A',
            Strategy::B { .. } => 'B',
            Strategy::C { .. } => 'C',
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Strategy::A { r1, r2 } => write!(f, "A({r1}+{r2})"),
            Strategy::B { r } => write!(f, "B({r})"),
            Strategy::C { r } => write!(f, "C({r})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    GtAde,
    SelfLikelihood,
}

impl Selection {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gt-ade" => Ok(Selection::GtAde),
            "self-likelihood" => Ok(Selection::SelfLikelihood),
            other => Err(Error::Config(format!("unknown selection {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Selection::GtAde => "gt-ade",
            Selection::SelfLikelihood => "self-likelihood",
        }
    }
}

/// How strategy A's candidates are counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Accounting {
    /// Every run's mean plus the draws from the selected run (10+10 = 20).
    Pooled,
    /// Selected mean plus its draws (10+10 = 11).
    PostSelection,
}

impl Accounting {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(Accounting::Pooled),
            "post-selection" => Ok(Accounting::PostSelection),
            other => Err(Error::Config(format!("unknown accounting {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Accounting::Pooled => "pooled",
            Accounting::PostSelection => "post-selection",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleConfig {
    pub strategy: Strategy,
    pub selection: Selection,
    pub accounting: Accounting,
    /// Upper bound on candidates per pedestrian.
    pub budget: Option<usize>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            strategy: Strategy::A { r1: 10, r2: 10 },
            selection: Selection::GtAde,
            accounting: Accounting::Pooled,
            budget: None,
        }
    }
}

impl SampleConfig {
    /// Label for the N column of reports.
    pub fn protocol(&self) -> String {
        let n = match (self.strategy, self.accounting) {
            (Strategy::A { r1, r2 }, _) => format!("{r1}+{r2}"),
            (Strategy::B { r } | Strategy::C { r }, _) => r.to_string(),
        };
        let mut s = format!("{}:{n}", self.strategy.letter());
        if matches!(self.strategy, Strategy::A { .. }) {
            s.push(':');
            s.push_str(self.accounting.as_str());
        }
        if let Some(b) = self.budget {
            s.push_str(&format!(":max{b}"));
        }
        s
    }
}

/// Where a candidate came from: a reverse run and a Gaussian draw, or the
/// run's mean when `draw` is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub run: usize,
    pub draw: Option<usize>,
}

/// Candidate trajectories in absolute coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    /// `[N][M][T']`
    pub candidates: Vec<Vec<Path2>>,
    /// `[N][M]`
    pub provenance: Vec<Vec<Provenance>>,
}

impl PredictionSet {
    pub fn num_peds(&self) -> usize {
        self.candidates.len()
    }

    pub fn num_candidates(&self, n: usize) -> usize {
        self.candidates[n].len()
    }
}

fn mean_path(field: &StatsField, n: usize, origin: [f64; 2]) -> Path2 {
    cumulate(origin, &field.mean_steps(n))
}

fn draw_path<R: Rng + ?Sized>(field: &StatsField, n: usize, origin: [f64; 2], rng: &mut R) -> Path2 {
    let steps: Vec<f32> = (0..field.horizon())
        .flat_map(|t| {
            let [x, y] = sample_location(&field.gaussian(n, t), rng);
            [x as f32, y as f32]
        })
        .collect();
    cumulate(origin, &steps)
}

/// Picks one field for pedestrian `n`. `gt` is the displacement row `[T', 2]`.
/// Ties go to the lowest index.
pub fn select_best(fields: &[StatsField], n: usize, criterion: Selection, gt: Option<&[f32]>) -> Result<usize> {
    if fields.is_empty() {
        return Err(Error::Invalid("no fields to select from".into()));
    }
    let score = |f: &StatsField| -> Result<f64> {
        match criterion {
            Selection::GtAde => {
                let gt = gt.ok_or_else(|| Error::Invalid("gt-ade selection needs ground truth".into()))?;
                Ok(-ade(&mean_path(f, n, [0.0; 2]), &cumulate([0.0; 2], gt))?)
            }
            Selection::SelfLikelihood => (0..f.horizon())
                .map(|t| {
                    let g = f.gaussian(n, t);
                    log_pdf([g.mu1, g.mu2], &g)
                })
                .sum(),
        }
    };
    let mut best = (0, score(&fields[0])?);
    for (i, f) in fields.iter().enumerate().skip(1) {
        let s = score(f)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

/// Candidates from already generated fields. `gt` is `[N, T', 2]` displacements.
pub fn candidates_from_fields<R: Rng + ?Sized>(
    fields: &[StatsField],
    origins: &[[f64; 2]],
    cfg: &SampleConfig,
    gt: Option<&[f32]>,
    rng: &mut R,
) -> Result<PredictionSet> {
    cfg.strategy.validate()?;
    if fields.len() != cfg.strategy.reverse_runs() {
        return Err(Error::Invalid(format!(
            "strategy {} expects {} fields, got {}",
            cfg.strategy,
            cfg.strategy.reverse_runs(),
            fields.len()
        )));
    }
    let n_peds = origins.len();
    if fields.iter().any(|f| f.num_peds() != n_peds) {
        return Err(Error::shape("hybrid_sample", "fields and origins disagree on N"));
    }
    if cfg.selection == Selection::GtAde && matches!(cfg.strategy, Strategy::A { .. }) && gt.is_none() {
        return Err(Error::Invalid("gt-ade selection needs ground truth".into()));
    }
    let horizon = fields[0].horizon();
    let mut out = PredictionSet {
        candidates: Vec::with_capacity(n_peds),
        provenance: Vec::with_capacity(n_peds),
    };
    for (n, &origin) in origins.iter().enumerate() {
        let mut c = Vec::new();
        let mut p = Vec::new();
        match cfg.strategy {
            Strategy::A { r1, r2 } => {
                let row = gt.map(|g| &g[n * horizon * 2..(n + 1) * horizon * 2]);
                let sel = select_best(fields, n, cfg.selection, row)?;
                match cfg.accounting {
                    Accounting::Pooled => {
                        for (run, f) in fields.iter().enumerate().take(r1) {
                            c.push(mean_path(f, n, origin));
                            p.push(Provenance { run, draw: None });
                        }
                    }
                    Accounting::PostSelection => {
                        c.push(mean_path(&fields[sel], n, origin));
                        p.push(Provenance { run: sel, draw: None });
                    }
                }
                for d in 0..r2 {
                    c.push(draw_path(&fields[sel], n, origin, rng));
                    p.push(Provenance { run: sel, draw: Some(d) });
                }
            }
            Strategy::B { .. } => {
                for (run, f) in fields.iter().enumerate() {
                    c.push(draw_path(f, n, origin, rng));
                    p.push(Provenance { run, draw: Some(0) });
                }
            }
            Strategy::C { r } => {
                for d in 0..r {
                    c.push(draw_path(&fields[0], n, origin, rng));
                    p.push(Provenance { run: 0, draw: Some(d) });
                }
            }
        }
        if let Some(b) = cfg.budget {
            c.truncate(b.max(1));
            p.truncate(b.max(1));
        }
        out.candidates.push(c);
        out.provenance.push(p);
    }
    Ok(out)
}

/// Runs the reverse chain as the strategy requires, then draws candidates.
pub fn hybrid_sample<R: Rng + ?Sized>(
    model: &Model,
    window: &SceneWindow,
    sched: &Schedule,
    cfg: &SampleConfig,
    with_gt: bool,
    rng: &mut R,
) -> Result<PredictionSet> {
    cfg.strategy.validate()?;
    if cfg.selection == Selection::GtAde && !with_gt && matches!(cfg.strategy, Strategy::A { .. }) {
        return Err(Error::Invalid("gt-ade selection needs ground truth".into()));
    }
    let guidance = model.guidance(window)?;
    let fields = reverse_generate(
        &guidance,
        sched,
        &model.denoiser,
        &model.store,
        &model.norm,
        rng,
        cfg.strategy.reverse_runs(),
    )?;
    let origins: Vec<[f64; 2]> = window.origin.data().chunks_exact(2).map(|o| [o[0], o[1]]).collect();
    let gt = with_gt.then(|| window.future.data());
    candidates_from_fields(&fields, &origins, cfg, gt, rng)
}
