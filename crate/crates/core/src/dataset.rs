//! Load input domains, Latin hypercube sampling and labeled DC-OPF datasets.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dcopf::{dispatch_cost, solve_dcopf, DcOpfError};
use crate::grid::{AdmittanceSet, GridCase};
use crate::linalg::Matrix;
use crate::metrics::{self, Attained, Metric};
use crate::mlp::{complete_dispatch, MlpNetwork};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("invalid input domain: {0}")]
    Domain(&'static str),
    #[error("Latin hypercube sampling needs a box domain; use rejection sampling for polytopes")]
    NotABox,
    #[error("rejection sampling accepted only {accepted} of {wanted} points")]
    RejectionExhausted { accepted: usize, wanted: usize },
    #[error("{infeasible} of {total} samples are infeasible; the input domain is likely misconfigured")]
    TooManyInfeasible { infeasible: usize, total: usize },
    #[error("every sample is infeasible")]
    Empty,
    #[error(transparent)]
    DcOpf(#[from] DcOpfError),
}

/// Per-load box `[lower * nominal, upper * nominal]`, optionally cut by
/// extra rows `a . p_d <= b` (MW).
#[derive(Debug, Clone, PartialEq)]
pub struct InputDomain {
    pub nominal: Vec<f64>,
    /// Fractions of nominal demand.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub polytope: Vec<(Vec<f64>, f64)>,
}

impl InputDomain {
    /// Every load varies independently in `[lower, upper]` times its nominal value.
    pub fn uniform_box(case: &GridCase, lower: f64, upper: f64) -> Self {
        let n = case.n_loads();
        Self {
            nominal: case.nominal_loads(),
            lower: vec![lower; n],
            upper: vec![upper; n],
            polytope: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.nominal.len()
    }

    pub fn is_box(&self) -> bool {
        self.polytope.is_empty()
    }

    pub fn lo_mw(&self) -> Vec<f64> {
        self.nominal.iter().zip(&self.lower).map(|(p, f)| p * f).collect()
    }

    pub fn hi_mw(&self) -> Vec<f64> {
        self.nominal.iter().zip(&self.upper).map(|(p, f)| p * f).collect()
    }

    /// The box shrunk by `delta` on both sides, `[lower + delta, upper - delta]`.
    /// A box that would invert collapses to its midpoint.
    pub fn reduced(&self, delta: f64) -> Self {
        let mut d = self.clone();
        for (lo, hi) in d.lower.iter_mut().zip(d.upper.iter_mut()) {
            let (a, b) = (*lo + delta, *hi - delta);
            if a <= b {
                *lo = a;
                *hi = b;
            } else {
                let mid = (*lo + *hi) / 2.0;
                *lo = mid;
                *hi = mid;
            }
        }
        d
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let n = self.dim();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(DatasetError::Domain("bound vectors differ in length"));
        }
        for i in 0..n {
            if !(self.lower[i].is_finite() && self.upper[i].is_finite() && self.nominal[i].is_finite()) {
                return Err(DatasetError::Domain("bounds must be finite"));
            }
            if self.lower[i] > self.upper[i] {
                return Err(DatasetError::Domain("lower bound above upper bound"));
            }
            if self.lower[i] < 0.0 || self.nominal[i] < 0.0 {
                return Err(DatasetError::Domain("loads must be non-negative"));
            }
        }
        if self.polytope.iter().any(|(a, b)| a.len() != n || !b.is_finite()) {
            return Err(DatasetError::Domain("polytope row has the wrong length"));
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        let lo = self.lo_mw();
        let hi = self.hi_mw();
        p.iter()
            .zip(lo.iter().zip(&hi))
            .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
            && self
                .polytope
                .iter()
                .all(|(a, b)| a.iter().zip(p).map(|(x, y)| x * y).sum::<f64>() <= b + tol)
    }
}

/// Latin hypercube sample of `n` points in MW: in every dimension each of
/// the `n` equal-width strata holds exactly one point.
pub fn lhs_sample(domain: &InputDomain, n: usize, seed: u64) -> Result<Matrix, DatasetError> {
    domain.validate()?;
    if n == 0 {
        return Err(DatasetError::NoSamples);
    }
    if !domain.is_box() {
        return Err(DatasetError::NotABox);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = domain.dim();
    let (lo, hi) = (domain.lo_mw(), domain.hi_mw());
    let mut out = Matrix::zeros(n, d);
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(&mut rng);
        let width = (hi[j] - lo[j]) / n as f64;
        for (i, &stratum) in perm.iter().enumerate() {
            let u: f64 = rng.random();
            // Keep the point inside its half-open stratum despite rounding.
            let v = lo[j] + (stratum as f64 + u) * width;
            let top = lo[j] + (stratum + 1) as f64 * width;
            out[(i, j)] = if v >= top && width > 0.0 {
                lo[j] + stratum as f64 * width
            } else {
                v
            };
        }
    }
    Ok(out)
}

/// Uniform samples from the box, keeping those inside the polytope rows.
/// Gives up after `100 * n` draws.
pub fn rejection_sample(domain: &InputDomain, n: usize, seed: u64) -> Result<Matrix, DatasetError> {
    domain.validate()?;
    if n == 0 {
        return Err(DatasetError::NoSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (domain.lo_mw(), domain.hi_mw());
    let d = domain.dim();
    let mut rows = Vec::with_capacity(n * d);
    let mut accepted = 0;
    for _ in 0..100 * n {
        let p: Vec<f64> = (0..d)
            .map(|j| lo[j] + rng.random::<f64>() * (hi[j] - lo[j]))
            .collect();
        if domain.contains(&p, 0.0) {
            rows.extend_from_slice(&p);
            accepted += 1;
            if accepted == n {
                return Ok(Matrix::from_row_major(n, d, rows));
            }
        }
    }
    Err(DatasetError::RejectionExhausted { accepted, wanted: n })
}

/// Latin hypercube for boxes, rejection sampling otherwise.
pub fn sample_domain(domain: &InputDomain, n: usize, seed: u64) -> Result<Matrix, DatasetError> {
    if domain.is_box() {
        lhs_sample(domain, n, seed)
    } else {
        rejection_sample(domain, n, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub case_name: String,
    pub seed: u64,
    pub domain: InputDomain,
    pub n_requested: usize,
    pub n_infeasible: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// `N x n_loads`, MW.
    pub inputs: Matrix,
    /// `N x n_gens` optimal dispatch, MW.
    pub targets: Matrix,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Seeded 80/20 partition of `0..n`, each part sorted.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_train = (n * 4).div_ceil(5);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Builds a dataset from samples and their labels (`None` for infeasible
/// samples, which are dropped). Fails when more than half are infeasible.
pub fn assemble_dataset(
    samples: &Matrix,
    labels: Vec<Option<Vec<f64>>>,
    n_gens: usize,
    provenance: Provenance,
) -> Result<LabeledDataset, DatasetError> {
    let total = samples.rows();
    let infeasible = labels.iter().filter(|l| l.is_none()).count();
    if 2 * infeasible > total {
        return Err(DatasetError::TooManyInfeasible { infeasible, total });
    }
    let kept = total - infeasible;
    if kept == 0 {
        return Err(DatasetError::Empty);
    }
    let mut inputs = Vec::with_capacity(kept * samples.cols());
    let mut targets = Vec::with_capacity(kept * n_gens);
    for (i, label) in labels.into_iter().enumerate() {
        if let Some(t) = label {
            inputs.extend_from_slice(samples.row(i));
            targets.extend_from_slice(&t);
        }
    }
    let (train, test) = split_indices(kept, provenance.seed);
    Ok(LabeledDataset {
        inputs: Matrix::from_row_major(kept, samples.cols(), inputs),
        targets: Matrix::from_row_major(kept, n_gens, targets),
        train,
        test,
        provenance: Provenance {
            n_infeasible: infeasible,
            ..provenance
        },
    })
}

/// Optimal dispatch for one sample, `None` when infeasible.
pub fn label_sample(
    case: &GridCase,
    adm: &AdmittanceSet,
    load: &[f64],
) -> Result<Option<Vec<f64>>, DatasetError> {
    match solve_dcopf(case, adm, load) {
        Ok(s) => Ok(Some(s.p_g)),
        Err(DcOpfError::Infeasible) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Samples the domain, solves a DC-OPF per sample and splits 80/20.
pub fn generate_dataset(
    case: &GridCase,
    adm: &AdmittanceSet,
    domain: &InputDomain,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset, DatasetError> {
    let samples = sample_domain(domain, n, seed)?;
    let labels = (0..samples.rows())
        .map(|i| label_sample(case, adm, samples.row(i)))
        .collect::<Result<Vec<_>, _>>()?;
    assemble_dataset(
        &samples,
        labels,
        case.n_gens(),
        Provenance {
            case_name: case.name.clone(),
            seed,
            domain: domain.clone(),
            n_requested: n,
            n_infeasible: 0,
        },
    )
}

/// Largest value of one metric over the dataset and the row attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalMax {
    pub value: f64,
    pub row: usize,
    /// Generator or line index attaining the value.
    pub index: Option<usize>,
}

/// Empirical worst cases over every dataset row, a lower bound on the
/// verified guarantees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalWorstCase {
    pub nu_g: EmpiricalMax,
    pub nu_line: EmpiricalMax,
    pub nu_dist: EmpiricalMax,
    pub nu_opt: EmpiricalMax,
}

impl EmpiricalWorstCase {
    pub fn get(&self, m: Metric) -> EmpiricalMax {
        match m {
            Metric::NuG => self.nu_g,
            Metric::NuLine => self.nu_line,
            Metric::NuDist => self.nu_dist,
            Metric::NuOpt => self.nu_opt,
        }
    }
}

/// Evaluates all four metrics on every row (train and test). `reference_cost`
/// normalizes the sub-optimality, usually the optimal cost at nominal load.
pub fn empirical_worst_case(
    data: &LabeledDataset,
    net: &MlpNetwork,
    case: &GridCase,
    adm: &AdmittanceSet,
    reference_cost: f64,
) -> EmpiricalWorstCase {
    let start = EmpiricalMax {
        value: f64::NEG_INFINITY,
        row: 0,
        index: None,
    };
    let mut acc = [start; 4];
    let mut offer = |slot: usize, a: Attained, row: usize| {
        if a.value > acc[slot].value {
            acc[slot] = EmpiricalMax {
                value: a.value,
                row,
                index: a.index,
            };
        }
    };
    for i in 0..data.len() {
        let load = data.inputs.row(i);
        let target = data.targets.row(i);
        let full = complete_dispatch(case, &net.forward(load), load);
        offer(0, metrics::gen_violation(case, &full), i);
        offer(1, metrics::line_violation(case, adm, load, &full), i);
        offer(2, metrics::distance_pct(case, &full, target), i);
        let raw = dispatch_cost(case, &full) - dispatch_cost(case, target);
        offer(
            3,
            Attained {
                value: 100.0 * raw / reference_cost,
                index: None,
            },
            i,
        );
    }
    EmpiricalWorstCase {
        nu_g: acc[0],
        nu_line: acc[1],
        nu_dist: acc[2],
        nu_opt: acc[3],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcopf::tests::merit_case;
    use crate::grid::tests::ring3;
    use crate::mlp::{train, Optimizer, TrainConfig};
    use proptest::prelude::*;

    fn unit_domain(d: usize) -> InputDomain {
        InputDomain {
            nominal: vec![1.0; d],
            lower: vec![0.0; d],
            upper: vec![1.0; d],
            polytope: Vec::new(),
        }
    }

    #[test]
    fn two_samples_take_both_halves() {
        let s = lhs_sample(&unit_domain(1), 2, 3).unwrap();
        let mut v = [s[(0, 0)], s[(1, 0)]];
        v.sort_by(f64::total_cmp);
        assert!(v[0] < 0.5 && v[1] >= 0.5 && v[1] < 1.0);
    }

    #[test]
    fn lhs_is_seeded() {
        let d = unit_domain(3);
        assert_eq!(lhs_sample(&d, 50, 9).unwrap(), lhs_sample(&d, 50, 9).unwrap());
        assert_ne!(lhs_sample(&d, 50, 9).unwrap(), lhs_sample(&d, 50, 10).unwrap());
    }

    #[test]
    fn polytope_needs_rejection_sampling() {
        let mut d = unit_domain(2);
        d.polytope.push((vec![1.0, 1.0], 1.0));
        assert_eq!(lhs_sample(&d, 4, 1), Err(DatasetError::NotABox));
        let s = sample_domain(&d, 20, 1).unwrap();
        for i in 0..20 {
            assert!(s[(i, 0)] + s[(i, 1)] <= 1.0);
        }
    }

    proptest! {
        #[test]
        fn prop_one_sample_per_stratum(n in 1usize..60, d in 1usize..4, seed in any::<u64>()) {
            let s = lhs_sample(&unit_domain(d), n, seed).unwrap();
            for j in 0..d {
                let mut seen = vec![0usize; n];
                for i in 0..n {
                    let k = libm::floor(s[(i, j)] * n as f64) as usize;
                    seen[k.min(n - 1)] += 1;
                }
                prop_assert!(seen.iter().all(|&c| c == 1));
            }
        }
    }

    #[test]
    fn single_generator_target_is_total_load() {
        let mut c = merit_case();
        c.gens.truncate(1);
        c.gens[0].p_max = 200.0;
        let adm = AdmittanceSet::build(&c).unwrap();
        let dom = InputDomain::uniform_box(&c, 0.6, 1.0);
        let ds = generate_dataset(&c, &adm, &dom, 40, 5).unwrap();
        assert_eq!(ds.len(), 40);
        for i in 0..40 {
            assert!((ds.targets[(i, 0)] - ds.inputs[(i, 0)]).abs() < 1e-9);
        }
        assert_eq!(ds.train.len(), 32);
        assert_eq!(ds.test.len(), 8);
        let mut all: Vec<usize> = ds.train.iter().chain(&ds.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn overloaded_domain_aborts() {
        let c = merit_case();
        let adm = AdmittanceSet::build(&c).unwrap();
        // 160 MW capacity against 2 x 80 MW nominal load.
        let dom = InputDomain::uniform_box(&c, 2.2, 2.5);
        assert!(matches!(
            generate_dataset(&c, &adm, &dom, 20, 1),
            Err(DatasetError::TooManyInfeasible { .. })
        ));
    }

    #[test]
    fn reduction_collapses_to_the_midpoint() {
        let c = ring3();
        let d = InputDomain::uniform_box(&c, 0.6, 1.0).reduced(0.2);
        assert!((d.lower[0] - 0.8).abs() < 1e-12 && (d.upper[0] - 0.8).abs() < 1e-12);
        let d = InputDomain::uniform_box(&c, 0.6, 1.0).reduced(0.3);
        assert_eq!(d.lower[0], d.upper[0]);
    }

    #[test]
    fn trained_network_metrics_and_perfect_copy() {
        let c = ring3();
        let adm = AdmittanceSet::build(&c).unwrap();
        let dom = InputDomain::uniform_box(&c, 0.6, 1.0);
        let ds = generate_dataset(&c, &adm, &dom, 200, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 10,
            learning_rate: 1e-2,
            optimizer: Optimizer::Adam,
            prune_schedule: Vec::new(),
            seed: 1,
        };
        let out = train(&c, &ds, &[8], &cfg).unwrap();
        assert!(out.best_test_mse <= out.log.last().unwrap().test_mse);
        let reference = solve_dcopf(&c, &adm, &c.nominal_loads()).unwrap().objective_cost;
        let emp = empirical_worst_case(&ds, &out.net, &c, &adm, reference);
        assert!(emp.nu_dist.value >= 0.0);

        // Over [72, 120] MW the cheap unit at bus 1 is dispatched to the
        // whole load until its 150 MW limit, so the map is p = load and a
        // linear network copies it exactly.
        let w = vec![Matrix::from_rows(&[vec![1.0]]), Matrix::from_rows(&[vec![1.0]])];
        let copy = MlpNetwork::from_parameters(w, vec![vec![0.0], vec![0.0]]).unwrap();
        let emp = empirical_worst_case(&ds, &copy, &c, &adm, reference);
        assert!(emp.nu_dist.value.abs() < 1e-9);
        assert!(emp.nu_opt.value.abs() < 1e-9);
        assert!(emp.nu_g.value <= 0.0);
    }
}
