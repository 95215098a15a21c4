//! Critical zero-range process on a finite site graph: configuration
//! enumeration, generator and stationary measure, metastable well geometry,
//! the fixed-site limit generator, and the superharmonic and capacity test
//! functions used to certify the time scale.

use crate::chain::{MarkovChain, ProbMeasure};
use crate::error::{Error, Result};
use crate::meta::ReducedGenerator;
use crate::numeric::{kahan_sum, pearson, Kahan};
use crate::potential::{capacity, equilibrium_potential};
use crate::trace::WellPartition;
use rayon::prelude::*;
use serde::Serialize;

/// Hard ceiling on the number of configurations we will ever enumerate.
pub const HARD_STATE_CAP: u128 = 100_000_000;

/// Default well-width exponent.
pub const DEFAULT_DELTA: f64 = 0.25;

/// Default number of terms in the superharmonic sum.
pub const DEFAULT_M_TERMS: usize = 8;

/// Default depth exponent for a given number of sites.
pub fn default_gamma(kappa: usize) -> f64 {
    (1.0 / kappa as f64).min(0.5)
}

/// Jump rate out of a site holding `k` particles: 0, 1, then k/(k-1).
pub fn zr_rate_g(k: u64) -> f64 {
    match k {
        0 => 0.0,
        1 => 1.0,
        _ => k as f64 / (k - 1) as f64,
    }
}

/// The scale ladder attached to a particle count `n` and exponent `delta`.
///
/// All logarithms are natural. Construction checks the orderings the scales
/// are used for: `ell < m < n` always, `u < s` always, and `s < h` only in
/// the regime where it holds, i.e. when `1 + (ln n)^(1/4) < (ln n)^(1/2)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Scales {
    pub n: usize,
    pub delta: f64,
    pub theta: f64,
    pub ell: f64,
    pub m: f64,
    pub h: f64,
    pub u: f64,
    pub s: f64,
}

impl Scales {
    pub fn new(n: usize, delta: f64) -> Result<Scales> {
        if n < 2 {
            return Err(Error::InvalidModel(format!(
                "scales need at least 2 particles, got {n}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidModel(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        let nf = n as f64;
        let ln = nf.ln();
        let theta = nf * nf * ln;
        let ell = nf / ln;
        let m = nf / ln.powf(delta);
        let h = ln.powf(-0.5 - 2.0 * delta);
        let u = ln.powf(-1.0 - 2.0 * delta);
        let s = (1.0 + ln.powf(0.25)) * u;
        if !(ell < m && m < nf) {
            return Err(Error::InvalidModel(format!(
                "scale ordering ell < m < n fails at n = {n}: ell = {ell}, m = {m}"
            )));
        }
        if !(u < s) {
            return Err(Error::InvalidModel(format!(
                "scale ordering u < s fails at n = {n}"
            )));
        }
        // s < h only kicks in once (ln n)^(1/2) dominates 1 + (ln n)^(1/4).
        if 1.0 + ln.powf(0.25) < ln.sqrt() && !(s < h) {
            return Err(Error::InvalidModel(format!(
                "scale ordering s < h fails at n = {n}"
            )));
        }
        Ok(Scales {
            n,
            delta,
            theta,
            ell,
            m,
            h,
            u,
            s,
        })
    }
}

/// Zero-range model: `kappa` sites carrying `n` particles, a symmetric
/// irreducible random walk between sites, and the scale exponents.
#[derive(Clone, Debug)]
pub struct ZRModel {
    pub kappa: usize,
    pub n: usize,
    pub gamma: f64,
    pub delta: f64,
    /// When set, every configuration jump rate carries the factor theta.
    pub speedup: bool,
    walk_edges: Vec<(usize, usize, f64)>,
    walk_matrix: Vec<f64>,
    walk_chain: MarkovChain,
}

impl ZRModel {
    pub fn new(
        kappa: usize,
        n: usize,
        walk: &[(usize, usize, f64)],
        gamma: f64,
        delta: f64,
        speedup: bool,
    ) -> Result<ZRModel> {
        if kappa < 2 {
            return Err(Error::InvalidModel(format!(
                "need at least 2 sites, got {kappa}"
            )));
        }
        let gamma_cap = 2.0 / kappa as f64;
        if !(gamma > 0.0 && gamma < gamma_cap) {
            return Err(Error::InvalidModel(format!(
                "gamma must lie in (0, 2/kappa) = (0, {gamma_cap}), got {gamma}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidModel(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        let mut matrix = vec![0.0; kappa * kappa];
        for &(x, y, v) in walk {
            if x >= kappa || y >= kappa {
                return Err(Error::InvalidModel(format!(
                    "walk rate references site {} but there are {kappa} sites",
                    x.max(y)
                )));
            }
            if x == y {
                return Err(Error::InvalidModel(format!(
                    "walk rate on the diagonal at site {x}"
                )));
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "walk rate {x} -> {y} must be positive and finite, got {v}"
                )));
            }
            let slot = &mut matrix[x * kappa + y];
            if *slot != 0.0 && *slot != v {
                return Err(Error::InvalidModel(format!(
                    "conflicting walk rates for {x} -> {y}: {} vs {v}",
                    *slot
                )));
            }
            *slot = v;
        }
        for x in 0..kappa {
            for y in (x + 1)..kappa {
                let fwd = matrix[x * kappa + y];
                let bwd = matrix[y * kappa + x];
                if fwd != bwd {
                    return Err(Error::InvalidModel(format!(
                        "walk is not symmetric: rate {x} -> {y} is {fwd} but {y} -> {x} is {bwd}"
                    )));
                }
            }
        }
        let mut edges = Vec::new();
        for x in 0..kappa {
            for y in 0..kappa {
                let v = matrix[x * kappa + y];
                if v > 0.0 {
                    edges.push((x, y, v));
                }
            }
        }
        let walk_chain = MarkovChain::from_rates(kappa, &edges)?;
        if !walk_chain.is_irreducible() {
            return Err(Error::NotIrreducible {
                context: "site walk".into(),
            });
        }
        Ok(ZRModel {
            kappa,
            n,
            gamma,
            delta,
            speedup,
            walk_edges: edges,
            walk_matrix: matrix,
            walk_chain,
        })
    }

    /// Complete unit-rate walk with default exponents and no speedup.
    pub fn complete(kappa: usize, n: usize) -> Result<ZRModel> {
        let mut walk = Vec::new();
        for x in 0..kappa {
            for y in 0..kappa {
                if x != y {
                    walk.push((x, y, 1.0));
                }
            }
        }
        ZRModel::new(
            kappa,
            n,
            &walk,
            default_gamma(kappa),
            DEFAULT_DELTA,
            false,
        )
    }

    pub fn scales(&self) -> Result<Scales> {
        Scales::new(self.n, self.delta)
    }

    pub fn walk_rate(&self, x: usize, y: usize) -> f64 {
        self.walk_matrix[x * self.kappa + y]
    }

    pub fn walk_edges(&self) -> &[(usize, usize, f64)] {
        &self.walk_edges
    }

    pub fn walk_chain(&self) -> &MarkovChain {
        &self.walk_chain
    }

    /// Capacity between site sets under the walk with uniform site weights.
    pub fn walk_capacity(&self, a: &[usize], b: &[usize]) -> Result<f64> {
        let uniform = ProbMeasure::uniform(self.kappa);
        Ok(capacity(&self.walk_chain, &uniform, a, b)?.capacity)
    }

    /// Configuration with every particle parked at `x`.
    pub fn anchor_config(&self, x: usize) -> Vec<u32> {
        let mut cfg = vec![0u32; self.kappa];
        cfg[x] = self.n as u32;
        cfg
    }
}

/// Capacity between site sets for an arbitrary symmetric walk, with the
/// uniform measure on sites.
pub fn walk_capacity(
    kappa: usize,
    walk: &[(usize, usize, f64)],
    a: &[usize],
    b: &[usize],
) -> Result<f64> {
    let chain = MarkovChain::from_rates(kappa, walk)?;
    let uniform = ProbMeasure::uniform(kappa);
    Ok(capacity(&chain, &uniform, a, b)?.capacity)
}

/// Partial model read from a model spec file; merged with defaults and
/// command-line overrides by `build`.
#[derive(Clone, Debug, Default)]
pub struct ZRModelSpec {
    pub kappa: Option<usize>,
    pub walk: Vec<(usize, usize, f64)>,
    pub n: Option<usize>,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub speedup: Option<bool>,
}

impl ZRModelSpec {
    /// Parses the line-oriented model format. Keys: `kappa K`,
    /// `walk_rate X Y V` (0-based sites, one line per undirected edge),
    /// `N COUNT`, `delta D`, `gamma G`, `speedup on|off`. `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<ZRModelSpec> {
        let mut spec = ZRModelSpec::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let mut tokens = line.split_whitespace();
            let key = match tokens.next() {
                Some(k) => k,
                None => continue,
            };
            let rest: Vec<&str> = tokens.collect();
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let one = |what: &str| -> Result<&str> {
                if rest.len() != 1 {
                    return Err(parse_err(format!("{key} expects one {what}")));
                }
                Ok(rest[0])
            };
            match key {
                "kappa" => {
                    spec.kappa = Some(one("integer")?.parse().map_err(|_| {
                        parse_err(format!("bad site count {:?}", rest.first()))
                    })?);
                }
                "N" => {
                    spec.n = Some(one("integer")?.parse().map_err(|_| {
                        parse_err(format!("bad particle count {:?}", rest.first()))
                    })?);
                }
                "delta" => {
                    spec.delta = Some(one("number")?.parse().map_err(|_| {
                        parse_err(format!("bad delta {:?}", rest.first()))
                    })?);
                }
                "gamma" => {
                    spec.gamma = Some(one("number")?.parse().map_err(|_| {
                        parse_err(format!("bad gamma {:?}", rest.first()))
                    })?);
                }
                "speedup" => {
                    spec.speedup = Some(match one("flag")? {
                        "on" => true,
                        "off" => false,
                        other => {
                            return Err(parse_err(format!(
                                "speedup expects on or off, got {other:?}"
                            )))
                        }
                    });
                }
                "walk_rate" => {
                    if rest.len() != 3 {
                        return Err(parse_err("walk_rate expects X Y V".into()));
                    }
                    let x: usize = rest[0]
                        .parse()
                        .map_err(|_| parse_err(format!("bad site {:?}", rest[0])))?;
                    let y: usize = rest[1]
                        .parse()
                        .map_err(|_| parse_err(format!("bad site {:?}", rest[1])))?;
                    let v: f64 = rest[2]
                        .parse()
                        .map_err(|_| parse_err(format!("bad rate {:?}", rest[2])))?;
                    spec.walk.push((x, y, v));
                    spec.walk.push((y, x, v));
                }
                other => {
                    return Err(parse_err(format!("unknown key {other:?}")));
                }
            }
        }
        Ok(spec)
    }

    /// Builds the model, filling defaults: complete unit walk, delta 0.25,
    /// gamma min(1/2, 1/kappa), speedup on. `n_override` wins over the file.
    pub fn build(&self, n_override: Option<usize>) -> Result<ZRModel> {
        let kappa = self
            .kappa
            .ok_or_else(|| Error::InvalidModel("model spec is missing kappa".into()))?;
        let n = n_override.or(self.n).ok_or_else(|| {
            Error::InvalidModel("model spec has no N and none was supplied".into())
        })?;
        let walk;
        let walk_ref: &[(usize, usize, f64)] = if self.walk.is_empty() {
            walk = complete_walk(kappa);
            &walk
        } else {
            &self.walk
        };
        ZRModel::new(
            kappa,
            n,
            walk_ref,
            self.gamma.unwrap_or_else(|| default_gamma(kappa)),
            self.delta.unwrap_or(DEFAULT_DELTA),
            self.speedup.unwrap_or(true),
        )
    }
}

/// Unit rates between every ordered pair of distinct sites.
pub fn complete_walk(kappa: usize) -> Vec<(usize, usize, f64)> {
    let mut walk = Vec::new();
    for x in 0..kappa {
        for y in 0..kappa {
            if x != y {
                walk.push((x, y, 1.0));
            }
        }
    }
    walk
}

/// Exact binomial coefficient, `None` on u128 overflow.
fn binom(a: u128, b: usize) -> Option<u128> {
    let b128 = b as u128;
    if b128 > a {
        return Some(0);
    }
    let mut res: u128 = 1;
    // After step i the running value is C(a - b + i, i), so the division
    // below is exact.
    for i in 1..=b128 {
        res = res.checked_mul(a - b128 + i)? / i;
    }
    Some(res)
}

/// Number of configurations of `n` particles on `kappa` sites, `None` when
/// it does not fit in u128.
pub fn count_configs(n: usize, kappa: usize) -> Option<u128> {
    if kappa == 0 {
        return None;
    }
    binom((n + kappa - 1) as u128, kappa - 1)
}

/// All particle configurations on `kappa` sites summing to `n`, in
/// colexicographic order, with constant-time lookup by rank.
#[derive(Clone, Debug)]
pub struct ConfigTable {
    kappa: usize,
    n: usize,
    count: usize,
    configs: Vec<u32>,
}

/// Enumerates the configuration space, refusing to build more than
/// `HARD_STATE_CAP` states.
pub fn enumerate_configs(n: usize, kappa: usize) -> Result<ConfigTable> {
    if kappa == 0 {
        return Err(Error::InvalidInput("need at least one site".into()));
    }
    let count128 = binom((n + kappa - 1) as u128, kappa - 1)
        .ok_or(Error::StateCapExceeded {
            states: u128::MAX,
            cap: HARD_STATE_CAP,
        })?;
    if count128 > HARD_STATE_CAP {
        return Err(Error::StateCapExceeded {
            states: count128,
            cap: HARD_STATE_CAP,
        });
    }
    let count = count128 as usize;
    let mut configs = Vec::with_capacity(count * kappa);
    let mut cur = vec![0u32; kappa];
    // The last site moves slowest, ascending, which is exactly colex order.
    fn rec(site: usize, mass: u32, cur: &mut [u32], out: &mut Vec<u32>) {
        if site == 0 {
            cur[0] = mass;
            out.extend_from_slice(cur);
            return;
        }
        for v in 0..=mass {
            cur[site] = v;
            rec(site - 1, mass - v, cur, out);
        }
    }
    rec(kappa - 1, n as u32, &mut cur, &mut configs);
    debug_assert_eq!(configs.len(), count * kappa);
    Ok(ConfigTable {
        kappa,
        n,
        count,
        configs,
    })
}

impl ConfigTable {
    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn config(&self, rank: usize) -> &[u32] {
        &self.configs[rank * self.kappa..(rank + 1) * self.kappa]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.configs.chunks_exact(self.kappa)
    }

    /// Colex rank of a configuration (must sum to `n`).
    pub fn rank(&self, cfg: &[u32]) -> usize {
        debug_assert_eq!(cfg.len(), self.kappa);
        debug_assert_eq!(cfg.iter().map(|&v| v as usize).sum::<usize>(), self.n);
        let mut rank: u128 = 0;
        let mut prefix = cfg[0] as u128;
        for j in 1..self.kappa {
            prefix += cfg[j] as u128;
            let hi = binom(prefix + j as u128, j).expect("within enumerated range");
            let lo = binom(prefix - cfg[j] as u128 + j as u128, j)
                .expect("within enumerated range");
            rank += hi - lo;
        }
        rank as usize
    }

    /// Rank after moving one particle from `x` to `y`; `None` if site `x`
    /// is empty or `x == y`.
    pub fn sigma_rank(&self, rank: usize, x: usize, y: usize) -> Option<usize> {
        if x == y {
            return None;
        }
        let cfg = self.config(rank);
        if cfg[x] == 0 {
            return None;
        }
        let mut moved = cfg.to_vec();
        moved[x] -= 1;
        moved[y] += 1;
        Some(self.rank(&moved))
    }
}

/// Generator of the zero-range process on the full configuration space.
/// Rates are `g(eta_x) r(x, y)`, times theta when the model is sped up.
pub fn zr_generator(model: &ZRModel, table: &ConfigTable) -> Result<MarkovChain> {
    check_table(model, table)?;
    let speed = if model.speedup {
        model.scales()?.theta
    } else {
        1.0
    };
    let entries: Vec<(usize, usize, f64)> = (0..table.count())
        .into_par_iter()
        .flat_map_iter(|i| {
            let cfg = table.config(i);
            let mut out = Vec::new();
            for &(x, y, r) in model.walk_edges() {
                if cfg[x] == 0 {
                    continue;
                }
                let j = table.sigma_rank(i, x, y).expect("occupied site");
                out.push((i, j, zr_rate_g(cfg[x] as u64) * r * speed));
            }
            out
        })
        .collect();
    MarkovChain::from_rates(table.count(), &entries)
}

/// Stationary measure (product of inverse factorial-like weights,
/// normalized) together with the scaled partition function.
pub fn zr_measure(model: &ZRModel, table: &ConfigTable) -> Result<(ProbMeasure, f64)> {
    check_table(model, table)?;
    if model.n < 2 {
        return Err(Error::InvalidModel(format!(
            "partition function needs at least 2 particles, got {}",
            model.n
        )));
    }
    let weights: Vec<f64> = table
        .iter()
        .map(|cfg| {
            let mut a = 1.0f64;
            for &v in cfg {
                a *= (v.max(1)) as f64;
            }
            1.0 / a
        })
        .collect();
    let total = kahan_sum(weights.iter().copied());
    let nf = model.n as f64;
    let z = nf * total / nf.ln().powi(model.kappa as i32 - 1);
    Ok((ProbMeasure::from_weights(weights)?, z))
}

fn check_table(model: &ZRModel, table: &ConfigTable) -> Result<()> {
    if table.kappa() != model.kappa || table.n() != model.n {
        return Err(Error::InvalidInput(format!(
            "table is for {} sites / {} particles, model has {} / {}",
            table.kappa(),
            table.n(),
            model.kappa,
            model.n
        )));
    }
    Ok(())
}

/// Nested well geometry around each site: deep cores D, wells E (the
/// partition), wide wells W, and basins V, plus the anchor configurations.
#[derive(Clone, Debug)]
pub struct ZRWells {
    pub partition: WellPartition,
    pub d: Vec<Vec<usize>>,
    pub w: Vec<Vec<usize>>,
    pub v: Vec<Vec<usize>>,
    /// Rank of the configuration with all particles at site x.
    pub anchors: Vec<usize>,
    pub scales: Scales,
    /// Occupation thresholds: eta_x >= t_e puts the state in well x, and
    /// likewise for t_d (cores) and t_w (wide wells); eta_y <= t_v for all
    /// y != x puts the state in basin x.
    pub t_e: u32,
    pub t_d: u32,
    pub t_w: u32,
    pub t_v: u32,
}

impl ZRWells {
    /// Largest distance-from-full `n - eta_x` still inside well x.
    pub fn e_cut(&self) -> usize {
        self.scales.n - self.t_e as usize
    }

    pub fn d_cut(&self) -> usize {
        self.scales.n - self.t_d as usize
    }

    pub fn w_cut(&self) -> usize {
        self.scales.n - self.t_w as usize
    }
}

fn well_thresholds(n: usize, gamma: f64, delta: f64) -> Result<(Scales, u32, u32, u32, u32)> {
    let scales = Scales::new(n, delta)?;
    let nf = n as f64;
    let t_e = (nf - scales.ell).ceil().max(0.0) as u32;
    let t_d = (nf - nf.powf(gamma)).ceil().max(0.0) as u32;
    let t_w = (nf - scales.m).ceil().max(0.0) as u32;
    let t_v = scales.m.ceil() as u32;
    Ok((scales, t_e, t_d, t_w, t_v))
}

fn wells_feasible(n: usize, gamma: f64, delta: f64) -> bool {
    match well_thresholds(n, gamma, delta) {
        Ok((_, t_e, t_d, t_w, _)) => {
            2 * t_e as usize > n && t_w >= 1 && t_w <= t_e && t_e <= t_d
        }
        Err(_) => false,
    }
}

/// Builds the nested wells for the model. Fails with the smallest particle
/// count that works when the wells would overlap at this `n`.
pub fn zr_wells(model: &ZRModel, table: &ConfigTable) -> Result<ZRWells> {
    check_table(model, table)?;
    let n = model.n;
    let (scales, t_e, t_d, t_w, t_v) = well_thresholds(n, model.gamma, model.delta)?;
    if 2 * t_e as usize <= n {
        let min_valid_n = (n + 1..n + 1_000_000)
            .find(|&m| wells_feasible(m, model.gamma, model.delta))
            .ok_or_else(|| {
                Error::InvalidModel("no particle count separates the wells".into())
            })?;
        return Err(Error::OverlappingWells {
            n: n as u64,
            min_valid_n: min_valid_n as u64,
        });
    }
    if !(t_w >= 1 && t_w <= t_e && t_e <= t_d) {
        return Err(Error::InvalidModel(format!(
            "well thresholds out of order at n = {n}: deep {t_d}, well {t_e}, wide {t_w}"
        )));
    }
    let kappa = model.kappa;
    let mut e_sets = vec![Vec::new(); kappa];
    let mut d = vec![Vec::new(); kappa];
    let mut w = vec![Vec::new(); kappa];
    let mut v = vec![Vec::new(); kappa];
    for (i, cfg) in table.iter().enumerate() {
        for x in 0..kappa {
            if cfg[x] >= t_e {
                e_sets[x].push(i);
            }
            if cfg[x] >= t_d {
                d[x].push(i);
            }
            if cfg[x] >= t_w {
                w[x].push(i);
            }
            if (0..kappa).all(|y| y == x || cfg[y] <= t_v) {
                v[x].push(i);
            }
        }
    }
    let anchors: Vec<usize> = (0..kappa)
        .map(|x| table.rank(&model.anchor_config(x)))
        .collect();
    let partition = WellPartition::new(table.count(), e_sets)?;
    Ok(ZRWells {
        partition,
        d,
        w,
        v,
        anchors,
        scales,
        t_e,
        t_d,
        t_w,
        t_v,
    })
}

/// Limit description of the condensate location: a generator on the sites
/// with rate `6 kappa cap(x, y)` between distinct sites.
pub fn limit_generator_ly(model: &ZRModel) -> Result<ReducedGenerator> {
    let kappa = model.kappa;
    let mut rates = vec![0.0; kappa * kappa];
    for x in 0..kappa {
        for y in 0..kappa {
            if x != y {
                rates[x * kappa + y] =
                    6.0 * kappa as f64 * model.walk_capacity(&[x], &[y])?;
            }
        }
    }
    Ok(ReducedGenerator {
        k: kappa,
        rates,
        negativity_mass: 0.0,
        rowsum_residual: 0.0,
    })
}

/// Quadratic-form coefficients for a nonempty site subset `a` avoiding the
/// reference site: `b[x][y] = h_{x, a^c}(y) / (kappa cap(x, a^c))`, returned
/// as a dense kappa-by-kappa matrix, zero outside `a`.
pub fn quadratic_b_coefficients(model: &ZRModel, a: &[usize]) -> Result<Vec<f64>> {
    let kappa = model.kappa;
    let mut mask = 0u32;
    for &x in a {
        if x >= kappa {
            return Err(Error::StateOutOfRange {
                index: x,
                n_states: kappa,
            });
        }
        mask |= 1 << x;
    }
    b_matrix_for_mask(model, mask)
}

fn b_matrix_for_mask(model: &ZRModel, mask: u32) -> Result<Vec<f64>> {
    let kappa = model.kappa;
    if mask == 0 {
        return Err(Error::InvalidInput("empty site subset".into()));
    }
    let members: Vec<usize> = (0..kappa).filter(|&x| mask & (1 << x) != 0).collect();
    let complement: Vec<usize> = (0..kappa).filter(|&x| mask & (1 << x) == 0).collect();
    if complement.is_empty() {
        return Err(Error::InvalidInput(
            "site subset must avoid at least one site".into(),
        ));
    }
    let uniform = ProbMeasure::uniform(kappa);
    let mut b = vec![0.0; kappa * kappa];
    for &x in &members {
        let h = equilibrium_potential(model.walk_chain(), &[x], &complement)?;
        let cap = capacity(model.walk_chain(), &uniform, &[x], &complement)?.capacity;
        for &y in &members {
            b[x * kappa + y] = h[y] / (kappa as f64 * cap);
        }
    }
    // The coefficients are symmetric in (x, y); enforce it and keep the mean.
    for &x in &members {
        for &y in &members {
            if y <= x {
                continue;
            }
            let fwd = b[x * kappa + y];
            let bwd = b[y * kappa + x];
            let gap = (fwd - bwd).abs();
            if gap > 1e-8 * fwd.abs().max(bwd.abs()).max(1.0) {
                return Err(Error::IdentityViolated {
                    context: format!("b coefficient symmetry for sites {x}, {y}"),
                    gap,
                });
            }
            let mean = 0.5 * (fwd + bwd);
            b[x * kappa + y] = mean;
            b[y * kappa + x] = mean;
        }
    }
    Ok(b)
}

fn eval_quadratic(b: &[f64], members: &[usize], kappa: usize, cfg: &[u32]) -> f64 {
    let mut total = 0.0;
    for (pos, &x) in members.iter().enumerate() {
        let ex = cfg[x] as f64;
        total += 0.5 * b[x * kappa + x] * ex * (ex - 1.0);
        for &y in &members[pos + 1..] {
            total += b[x * kappa + y] * ex * cfg[y] as f64;
        }
    }
    total
}

/// Superharmonic test function: its values over the configuration table,
/// the support region, and the correction coefficients used.
#[derive(Clone, Debug)]
pub struct Superharmonic {
    pub x0: usize,
    pub m_terms: usize,
    pub c_coeffs: Vec<f64>,
    pub values: Vec<f64>,
    /// Support: the wide well shell around `x0` plus its one-jump closure.
    pub in_support: Vec<bool>,
}

struct ShellRegion {
    t_w: u32,
    in_support: Vec<bool>,
    shell: Vec<usize>,
}

fn shell_region(model: &ZRModel, table: &ConfigTable, x0: usize) -> Result<ShellRegion> {
    let (_, _, t_d, t_w, _) = well_thresholds(model.n, model.gamma, model.delta)?;
    if t_w < 1 || t_w >= t_d {
        return Err(Error::InvalidModel(format!(
            "shell between wide and deep thresholds is empty: wide {t_w}, deep {t_d}"
        )));
    }
    let mut in_support = vec![false; table.count()];
    let mut shell = Vec::new();
    for (i, cfg) in table.iter().enumerate() {
        if cfg[x0] >= t_w && cfg[x0] < t_d {
            shell.push(i);
            in_support[i] = true;
        }
    }
    for &i in &shell {
        let cfg = table.config(i);
        for &(x, y, _) in model.walk_edges() {
            if cfg[x] == 0 {
                continue;
            }
            let j = table.sigma_rank(i, x, y).expect("occupied site");
            in_support[j] = true;
        }
    }
    Ok(ShellRegion {
        t_w,
        in_support,
        shell,
    })
}

/// Builds the superharmonic test function around site `x0`.
///
/// `c_coeffs[s - 1]` is the positive correction weight for site subsets of
/// size `s`; there must be exactly `kappa - 2` of them (none at two sites).
pub fn superharmonic_g(
    model: &ZRModel,
    table: &ConfigTable,
    x0: usize,
    m_terms: usize,
    c_coeffs: &[f64],
) -> Result<Superharmonic> {
    check_table(model, table)?;
    let kappa = model.kappa;
    if x0 >= kappa {
        return Err(Error::StateOutOfRange {
            index: x0,
            n_states: kappa,
        });
    }
    if m_terms <= 2 {
        return Err(Error::InvalidInput(format!(
            "the superharmonic sum needs more than 2 terms, got {m_terms}"
        )));
    }
    if c_coeffs.len() != kappa.saturating_sub(2) {
        return Err(Error::InvalidInput(format!(
            "expected {} correction coefficients for {kappa} sites, got {}",
            kappa.saturating_sub(2),
            c_coeffs.len()
        )));
    }
    if c_coeffs.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidInput(
            "correction coefficients must be positive and finite".into(),
        ));
    }
    let region = shell_region(model, table, x0)?;

    let s0_mask: u32 = ((1u32 << kappa) - 1) & !(1 << x0);
    let mut subsets: Vec<(u32, Vec<usize>, Vec<f64>)> = Vec::new();
    let mut sub = s0_mask;
    loop {
        if sub != 0 {
            let members: Vec<usize> =
                (0..kappa).filter(|&x| sub & (1 << x) != 0).collect();
            subsets.push((sub, members, b_matrix_for_mask(model, sub)?));
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & s0_mask;
    }
    subsets.sort_by_key(|(mask, _, _)| *mask);
    // Enlarging the subset can only raise each coefficient; a violation
    // means the walk potentials are inconsistent.
    for (ma, mem_a, ba) in &subsets {
        for (mb, _, bb) in &subsets {
            if ma == mb || ma & mb != *ma {
                continue;
            }
            for &x in mem_a {
                for &y in mem_a {
                    let gap = ba[x * kappa + y] - bb[x * kappa + y];
                    if gap > 1e-10 {
                        return Err(Error::IdentityViolated {
                            context: format!(
                                "subset monotonicity of b coefficients at sites {x}, {y}"
                            ),
                            gap,
                        });
                    }
                }
            }
        }
    }
    let full_idx = subsets
        .iter()
        .position(|(mask, _, _)| *mask == s0_mask)
        .expect("full subset present");
    let proper: Vec<(usize, f64)> = subsets
        .iter()
        .enumerate()
        .filter(|(idx, _)| *idx != full_idx)
        .map(|(idx, (mask, _, _))| {
            (idx, c_coeffs[mask.count_ones() as usize - 1])
        })
        .collect();

    let values: Vec<f64> = (0..table.count())
        .into_par_iter()
        .map(|i| -> Result<f64> {
            if !region.in_support[i] {
                return Ok(0.0);
            }
            let cfg = table.config(i);
            let p_full = {
                let (_, members, b) = &subsets[full_idx];
                eval_quadratic(b, members, kappa, cfg)
            };
            let p_proper: Vec<f64> = proper
                .iter()
                .map(|&(idx, _)| {
                    let (_, members, b) = &subsets[idx];
                    eval_quadratic(b, members, kappa, cfg)
                })
                .collect();
            let mut total = 0.0;
            for ell in 2..=m_terms {
                let ell2 = (ell * ell) as f64;
                let mut w = 0.0f64;
                for (slot, &(_, c)) in proper.iter().enumerate() {
                    w = w.min(p_proper[slot] - c * ell2);
                }
                let radicand = p_full - w;
                if !(radicand > 0.0) {
                    return Err(Error::NonPositiveRadicand {
                        state: i,
                        ell: ell as u32,
                    });
                }
                total += radicand.sqrt() / ell as f64;
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;

    Ok(Superharmonic {
        x0,
        m_terms,
        c_coeffs: c_coeffs.to_vec(),
        values,
        in_support: region.in_support,
    })
}

/// Outcome of checking a candidate test function on the wide-well shell.
#[derive(Clone, Debug, Serialize)]
pub struct SuperharmonicReport {
    /// Largest scaled drift `(L G)(eta) (n - eta_{x0})` over the shell.
    pub margin_max_full: f64,
    /// Same, with jumps leaving the wide well suppressed.
    pub margin_max_reflected: f64,
    /// Whether pushing a particle off the reference site never lowers G on
    /// the inner edge of the wide well.
    pub boundary_ok: bool,
    /// Worst boundary gap G(moved) - G(eta); negative means a violation.
    pub boundary_worst: f64,
    /// Correlation between the drift magnitude and 1/(n - eta_{x0}).
    pub correlation: f64,
    /// Smallest and largest G(eta)/(n - eta_{x0}) over the shell.
    pub bound_c1: f64,
    pub bound_c2: f64,
    pub n_checked: usize,
    pub verdict_pass: bool,
}

/// Checks the superharmonic drift inequality for `g_values` on the shell
/// between the wide and deep thresholds around `x0`. A failed inequality is
/// reported in the verdict, not raised as an error.
///
/// Margins use the un-sped jump rates; the speedup factor cancels against
/// the time scale in the target bound, so the verdict is the same either
/// way.
pub fn verify_superharmonic(
    model: &ZRModel,
    table: &ConfigTable,
    x0: usize,
    g_values: &[f64],
) -> Result<SuperharmonicReport> {
    check_table(model, table)?;
    if x0 >= model.kappa {
        return Err(Error::StateOutOfRange {
            index: x0,
            n_states: model.kappa,
        });
    }
    if g_values.len() != table.count() {
        return Err(Error::InvalidInput(format!(
            "test function has {} values for {} configurations",
            g_values.len(),
            table.count()
        )));
    }
    let region = shell_region(model, table, x0)?;
    let nf = model.n as f64;

    struct Row {
        full: f64,
        reflected: f64,
        inv_gap: f64,
        neg_drift: f64,
        g_ratio: f64,
    }
    let rows: Vec<Row> = region
        .shell
        .par_iter()
        .map(|&i| {
            let cfg = table.config(i);
            let gap = nf - cfg[x0] as f64;
            let mut full = 0.0;
            let mut reflected = 0.0;
            for &(x, y, r) in model.walk_edges() {
                if cfg[x] == 0 {
                    continue;
                }
                let j = table.sigma_rank(i, x, y).expect("occupied site");
                let delta = zr_rate_g(cfg[x] as u64) * r * (g_values[j] - g_values[i]);
                full += delta;
                let stays_wide = x != x0 || cfg[x0] > region.t_w;
                if stays_wide {
                    reflected += delta;
                }
            }
            Row {
                full: full * gap,
                reflected: reflected * gap,
                inv_gap: 1.0 / gap,
                neg_drift: -full,
                g_ratio: g_values[i] / gap,
            }
        })
        .collect();

    let mut margin_max_full = f64::NEG_INFINITY;
    let mut margin_max_reflected = f64::NEG_INFINITY;
    let mut bound_c1 = f64::INFINITY;
    let mut bound_c2 = f64::NEG_INFINITY;
    let mut xs = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    for row in &rows {
        margin_max_full = margin_max_full.max(row.full);
        margin_max_reflected = margin_max_reflected.max(row.reflected);
        bound_c1 = bound_c1.min(row.g_ratio);
        bound_c2 = bound_c2.max(row.g_ratio);
        xs.push(row.inv_gap);
        ys.push(row.neg_drift);
    }
    let correlation = pearson(&xs, &ys);

    let mut boundary_worst = f64::INFINITY;
    for &i in &region.shell {
        let cfg = table.config(i);
        if cfg[x0] != region.t_w {
            continue;
        }
        for y in 0..model.kappa {
            if y == x0 || model.walk_rate(x0, y) == 0.0 {
                continue;
            }
            let j = table.sigma_rank(i, x0, y).expect("occupied site");
            boundary_worst = boundary_worst.min(g_values[j] - g_values[i]);
        }
    }
    let boundary_ok =
        boundary_worst >= -1e-9 * (1.0 + inf_norm_of(g_values));
    let verdict_pass =
        margin_max_full < 0.0 && margin_max_reflected < 0.0 && boundary_ok;

    Ok(SuperharmonicReport {
        margin_max_full,
        margin_max_reflected,
        boundary_ok,
        boundary_worst,
        correlation,
        bound_c1,
        bound_c2,
        n_checked: rows.len(),
        verdict_pass,
    })
}

fn inf_norm_of(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()))
}

/// Correction-weight grid tried by the certificate search, per subset size.
pub const C_GRID: [f64; 11] = [
    0.0625, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0,
];

/// Searches the correction-weight grid for a superharmonic certificate,
/// returning the first passing candidate, or the best-margin failing one
/// when none passes.
pub fn search_superharmonic_certificate(
    model: &ZRModel,
    table: &ConfigTable,
    x0: usize,
    m_terms: usize,
) -> Result<(Superharmonic, SuperharmonicReport)> {
    let dims = model.kappa.saturating_sub(2);
    let mut indices = vec![0usize; dims];
    let mut best: Option<(Superharmonic, SuperharmonicReport)> = None;
    let mut last_err: Option<Error> = None;
    loop {
        let c: Vec<f64> = indices.iter().map(|&i| C_GRID[i]).collect();
        match superharmonic_g(model, table, x0, m_terms, &c) {
            Ok(g) => {
                let report = verify_superharmonic(model, table, x0, &g.values)?;
                if report.verdict_pass {
                    return Ok((g, report));
                }
                let better = match &best {
                    Some((_, prev)) => report.margin_max_full < prev.margin_max_full,
                    None => true,
                };
                if better {
                    best = Some((g, report));
                }
            }
            Err(e @ Error::NonPositiveRadicand { .. }) => {
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
        // Odometer over the grid; empty dims means a single candidate.
        let mut pos = 0;
        loop {
            if pos == dims {
                return match best {
                    Some(found) => Ok(found),
                    None => Err(last_err.expect("at least one candidate was tried")),
                };
            }
            indices[pos] += 1;
            if indices[pos] < C_GRID.len() {
                break;
            }
            indices[pos] = 0;
            pos += 1;
        }
    }
}

/// Radial capacity test function for well `x`, with its Dirichlet energy.
#[derive(Clone, Debug, Serialize)]
pub struct QFunction {
    #[serde(skip)]
    pub values: Vec<f64>,
    /// Dirichlet energy in the model's clock (includes theta when sped up).
    pub dirichlet: f64,
    /// Dirichlet energy times m^2 ln(n) / theta; bounded in n.
    pub witness: f64,
    pub e_cut: usize,
    pub w_cut: usize,
}

/// Builds the shell-ramp upper-bound test function: 1 distance-wise outside
/// the wide well, 0 on well `x`, harmonic-ramp weights in between, weighted
/// by inverse shell masses.
pub fn capacity_test_function_q(
    model: &ZRModel,
    table: &ConfigTable,
    chain: &MarkovChain,
    mu: &ProbMeasure,
    x: usize,
) -> Result<QFunction> {
    check_table(model, table)?;
    if x >= model.kappa {
        return Err(Error::StateOutOfRange {
            index: x,
            n_states: model.kappa,
        });
    }
    if chain.n_states() != table.count() || mu.len() != table.count() {
        return Err(Error::InvalidInput(
            "chain and measure must live on the configuration table".into(),
        ));
    }
    let n = model.n;
    let (scales, t_e, _, t_w, _) = well_thresholds(n, model.gamma, model.delta)?;
    let e_cut = n - t_e as usize;
    let w_cut = n - t_w as usize;
    if e_cut >= w_cut {
        return Err(Error::InvalidModel(format!(
            "ramp between well and wide well is empty: cuts {e_cut} and {w_cut}"
        )));
    }
    let mut shell_mass = vec![Kahan::new(); n + 1];
    for (i, cfg) in table.iter().enumerate() {
        shell_mass[n - cfg[x] as usize].add(mu.get(i));
    }
    let mut ramp = vec![0.0; w_cut - e_cut];
    for k in e_cut..w_cut {
        let mass = shell_mass[k].value();
        if mass <= 0.0 {
            return Err(Error::ZeroMass { state: k });
        }
        ramp[k - e_cut] = 1.0 / mass;
    }
    let denom = kahan_sum(ramp.iter().copied());
    // q(k) ramps with the partial sums; 0 through e_cut, 1 from w_cut on.
    let mut q_of_k = vec![0.0; n + 1];
    let mut acc = Kahan::new();
    for k in e_cut..w_cut {
        q_of_k[k] = acc.value() / denom;
        acc.add(ramp[k - e_cut]);
    }
    for k in w_cut..=n {
        q_of_k[k] = 1.0;
    }
    let values: Vec<f64> = table
        .iter()
        .map(|cfg| q_of_k[n - cfg[x] as usize])
        .collect();
    let d_chain = chain.dirichlet_form_by_parts(mu, &values);
    let dirichlet = if model.speedup {
        d_chain
    } else {
        scales.theta * d_chain
    };
    let witness = dirichlet * scales.m * scales.m * (n as f64).ln() / scales.theta;
    Ok(QFunction {
        values,
        dirichlet,
        witness,
        e_cut,
        w_cut,
    })
}

/// Indicator of the transition tube between sites `x` and `y`, as a set of
/// configurations with one particle removed (they live one level down).
pub fn tube_indicator(
    model: &ZRModel,
    table_down: &ConfigTable,
    x: usize,
    y: usize,
) -> Result<Vec<bool>> {
    if model.n == 0 || table_down.n() != model.n - 1 || table_down.kappa() != model.kappa {
        return Err(Error::InvalidInput(format!(
            "tube table must hold {} particles on {} sites",
            model.n.saturating_sub(1),
            model.kappa
        )));
    }
    if x >= model.kappa || y >= model.kappa || x == y {
        return Err(Error::InvalidInput(format!(
            "tube needs two distinct sites below {}, got {x} and {y}",
            model.kappa
        )));
    }
    let scales = model.scales()?;
    let down = (model.n - 1) as f64;
    let lower = (down - scales.ell / 3.0).ceil() as i64;
    let upper = (down - scales.ell).floor() as i64;
    Ok(table_down
        .iter()
        .map(|cfg| {
            let cx = cfg[x] as i64;
            let cy = cfg[y] as i64;
            cx + cy >= lower && cx <= upper && cy <= upper
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::max_abs_diff;

    fn table(n: usize, kappa: usize) -> ConfigTable {
        enumerate_configs(n, kappa).unwrap()
    }

    #[test]
    fn two_sites_two_particles_enumerates_in_colex_order() {
        let t = table(2, 2);
        assert_eq!(t.count(), 3);
        let rows: Vec<Vec<u32>> = t.iter().map(|c| c.to_vec()).collect();
        assert_eq!(rows, vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn zero_particles_is_a_single_configuration() {
        let t = table(0, 3);
        assert_eq!(t.count(), 1);
        assert_eq!(t.config(0), &[0, 0, 0]);
    }

    #[test]
    fn rank_round_trips_for_all_configurations() {
        for (n, kappa, expect) in [(10, 3, 66), (6, 4, 84), (5, 5, 126)] {
            let t = table(n, kappa);
            assert_eq!(t.count(), expect);
            for i in 0..t.count() {
                assert_eq!(t.rank(t.config(i)), i, "n={n} kappa={kappa} rank {i}");
            }
        }
    }

    #[test]
    fn sigma_rank_moves_one_particle_and_inverts() {
        let t = table(7, 3);
        for i in 0..t.count() {
            let cfg = t.config(i).to_vec();
            for x in 0..3 {
                for y in 0..3 {
                    match t.sigma_rank(i, x, y) {
                        Some(j) => {
                            assert!(x != y && cfg[x] > 0);
                            let moved = t.config(j);
                            assert_eq!(moved[x] + 1, cfg[x]);
                            assert_eq!(moved[y], cfg[y] + 1);
                            assert_eq!(t.sigma_rank(j, y, x), Some(i));
                        }
                        None => assert!(x == y || cfg[x] == 0),
                    }
                }
            }
        }
    }

    #[test]
    fn enumeration_refuses_astronomically_many_states() {
        let err = enumerate_configs(10_000, 8).unwrap_err();
        match err {
            Error::StateCapExceeded { states, cap } => {
                assert_eq!(cap, HARD_STATE_CAP);
                assert!(states > cap);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn generator_rates_match_the_two_particle_example() {
        let model = ZRModel::complete(2, 2).unwrap();
        let t = table(2, 2);
        let chain = zr_generator(&model, &t).unwrap();
        let full = t.rank(&[2, 0]);
        let split = t.rank(&[1, 1]);
        assert!((chain.rate(full, split) - 2.0).abs() < 1e-12);
        assert!((chain.rate(split, full) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn speedup_scales_every_rate_by_theta() {
        let slow = ZRModel::complete(2, 50).unwrap();
        let mut fast = slow.clone();
        fast.speedup = true;
        let t = table(50, 2);
        let theta = slow.scales().unwrap().theta;
        let slow_chain = zr_generator(&slow, &t).unwrap();
        let fast_chain = zr_generator(&fast, &t).unwrap();
        for (i, j, v) in slow_chain.entries() {
            let ratio = fast_chain.rate(i, j) / v;
            assert!((ratio - theta).abs() < 1e-9 * theta);
        }
    }

    #[test]
    fn generator_rejects_a_mismatched_table() {
        let model = ZRModel::complete(2, 5).unwrap();
        let t = table(6, 2);
        assert!(matches!(
            zr_generator(&model, &t),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn measure_matches_the_two_particle_example() {
        let model = ZRModel::complete(2, 2).unwrap();
        let t = table(2, 2);
        let (mu, z) = zr_measure(&model, &t).unwrap();
        assert!(max_abs_diff(mu.as_slice(), &[0.25, 0.5, 0.25]) < 1e-15);
        let expect = 4.0 / 2.0f64.ln();
        assert!((z - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn measure_is_reversible_and_stationary_for_the_generator() {
        let model = ZRModel::complete(3, 6).unwrap();
        let t = table(6, 3);
        let chain = zr_generator(&model, &t).unwrap();
        let (mu, _) = zr_measure(&model, &t).unwrap();
        let (reversible, violation) = chain.check_reversible(&mu);
        assert!(reversible, "detailed balance violation {violation}");
        let pi = chain.stationary_distribution().unwrap();
        assert!(max_abs_diff(pi.as_slice(), mu.as_slice()) < 1e-10);
    }

    #[test]
    fn partition_function_drifts_toward_the_site_count() {
        let z50 = {
            let model = ZRModel::complete(2, 50).unwrap();
            zr_measure(&model, &table(50, 2)).unwrap().1
        };
        let z400 = {
            let model = ZRModel::complete(2, 400).unwrap();
            zr_measure(&model, &table(400, 2)).unwrap().1
        };
        assert!((z400 - 2.0).abs() < (z50 - 2.0).abs());
    }

    #[test]
    fn wells_have_the_documented_thresholds_at_a_hundred_particles() {
        let model = ZRModel::complete(2, 100).unwrap();
        let t = table(100, 2);
        let wells = zr_wells(&model, &t).unwrap();
        assert_eq!(
            (wells.t_e, wells.t_d, wells.t_w, wells.t_v),
            (79, 90, 32, 69)
        );
        // floor(ell) + 1 occupation levels from the anchor down.
        assert_eq!(wells.partition.well(1).len(), 22);
        assert_eq!(wells.e_cut(), 21);
        assert!(!wells.partition.delta().is_empty());
    }

    #[test]
    fn wells_nest_and_contain_their_anchors() {
        let model = ZRModel::complete(3, 40).unwrap();
        let t = table(40, 3);
        let wells = zr_wells(&model, &t).unwrap();
        for x in 0..3 {
            let e: std::collections::HashSet<_> =
                wells.partition.well(x).iter().copied().collect();
            let w: std::collections::HashSet<_> = wells.w[x].iter().copied().collect();
            let v: std::collections::HashSet<_> = wells.v[x].iter().copied().collect();
            assert!(wells.d[x].contains(&wells.anchors[x]));
            assert!(wells.d[x].iter().all(|s| e.contains(s)));
            assert!(wells.partition.well(x).iter().all(|s| w.contains(s)));
            assert!(wells.w[x].iter().all(|s| v.contains(s)));
            assert_eq!(t.config(wells.anchors[x]), model.anchor_config(x).as_slice());
        }
    }

    #[test]
    fn overlapping_wells_report_the_smallest_workable_count() {
        let model = ZRModel::complete(2, 3).unwrap();
        let t = table(3, 2);
        match zr_wells(&model, &t) {
            Err(Error::OverlappingWells { n, min_valid_n }) => {
                assert_eq!(n, 3);
                assert_eq!(min_valid_n, 7);
            }
            other => panic!("expected overlapping wells, got {other:?}"),
        }
    }

    #[test]
    fn walk_capacities_match_hand_solved_values() {
        let two = ZRModel::complete(2, 10).unwrap();
        assert!((two.walk_capacity(&[0], &[1]).unwrap() - 0.5).abs() < 1e-12);
        let three = ZRModel::complete(3, 10).unwrap();
        assert!((three.walk_capacity(&[0], &[1]).unwrap() - 0.5).abs() < 1e-10);
        // Pinning one site against the other two costs more.
        let cap_both = three.walk_capacity(&[1], &[0, 2]).unwrap();
        assert!((cap_both - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn limit_generator_matches_the_pair_capacities() {
        let two = ZRModel::complete(2, 10).unwrap();
        let gen2 = limit_generator_ly(&two).unwrap();
        assert!((gen2.rate(0, 1) - 6.0).abs() < 1e-10);
        assert!((gen2.rate(1, 0) - 6.0).abs() < 1e-10);

        // Path walk 0 - 1 - 2: capacity through the middle stays positive.
        let path = ZRModel::new(
            3,
            10,
            &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
            default_gamma(3),
            DEFAULT_DELTA,
            false,
        )
        .unwrap();
        let gen3 = limit_generator_ly(&path).unwrap();
        assert!((gen3.rate(0, 2) - 3.0).abs() < 1e-10);
        assert!(gen3.rate(0, 2) > 0.0);
    }

    #[test]
    fn b_coefficients_match_hand_solved_values_on_three_sites() {
        // Reference site 0, so subsets live in {1, 2}.
        let model = ZRModel::complete(3, 10).unwrap();
        let full = quadratic_b_coefficients(&model, &[1, 2]).unwrap();
        assert!((full[1 * 3 + 1] - 2.0 / 3.0).abs() < 1e-10);
        assert!((full[1 * 3 + 2] - 1.0 / 3.0).abs() < 1e-10);
        assert!((full[2 * 3 + 1] - 1.0 / 3.0).abs() < 1e-10);
        let single = quadratic_b_coefficients(&model, &[1]).unwrap();
        assert!((single[1 * 3 + 1] - 0.5).abs() < 1e-10);
        // Growing the subset grows the coefficient.
        assert!(single[1 * 3 + 1] <= full[1 * 3 + 1] + 1e-12);
    }

    #[test]
    fn two_site_test_function_collapses_to_a_closed_form() {
        let model = ZRModel::complete(2, 50).unwrap();
        let t = table(50, 2);
        let g = superharmonic_g(&model, &t, 0, 8, &[]).unwrap();
        let c_m: f64 = (2..=8).map(|l| 1.0 / l as f64).sum();
        for (i, cfg) in t.iter().enumerate() {
            let expect = if g.in_support[i] {
                let e = cfg[1] as f64;
                c_m * (e * (e - 1.0) / 2.0).sqrt()
            } else {
                0.0
            };
            assert!(
                (g.values[i] - expect).abs() < 1e-10 * (1.0 + expect),
                "config {cfg:?}"
            );
        }
        // Anchor sits outside the support, so the function vanishes there.
        assert_eq!(g.values[t.rank(&model.anchor_config(0))], 0.0);
    }

    #[test]
    fn corrections_keep_the_test_function_above_the_bare_quadratic() {
        let model = ZRModel::complete(3, 30).unwrap();
        let t = table(30, 3);
        let g = superharmonic_g(&model, &t, 0, 8, &[1.0]).unwrap();
        let b = quadratic_b_coefficients(&model, &[1, 2]).unwrap();
        let c_m: f64 = (2..=8).map(|l| 1.0 / l as f64).sum();
        for (i, cfg) in t.iter().enumerate() {
            if !g.in_support[i] {
                continue;
            }
            let p = eval_quadratic(&b, &[1, 2], 3, cfg);
            // W is capped at zero, so every term dominates sqrt(P).
            assert!(g.values[i] >= c_m * p.sqrt() - 1e-12);
        }
    }

    #[test]
    fn drift_check_passes_on_a_wide_shell_and_reports_the_scaling() {
        let model = ZRModel::new(2, 100, &complete_walk(2), 0.5, 0.5, false).unwrap();
        let t = table(100, 2);
        let g = superharmonic_g(&model, &t, 0, 8, &[]).unwrap();
        let report = verify_superharmonic(&model, &t, 0, &g.values).unwrap();
        assert!(report.verdict_pass, "margin {}", report.margin_max_full);
        assert!(report.margin_max_full < -0.1);
        assert!(report.margin_max_reflected < 0.0);
        assert!(report.boundary_ok);
        assert!(report.correlation > 0.0);
        assert!(report.bound_c1 > 0.0);
        assert!(report.bound_c2 >= report.bound_c1);
    }

    #[test]
    fn drift_check_reports_failure_on_a_shell_past_the_halfway_point() {
        // delta = 0.25 pushes the wide well past n/2 here, and the drift
        // inequality genuinely fails; this must come back as a verdict.
        let model = ZRModel::complete(2, 100).unwrap();
        let t = table(100, 2);
        let g = superharmonic_g(&model, &t, 0, 8, &[]).unwrap();
        let report = verify_superharmonic(&model, &t, 0, &g.values).unwrap();
        assert!(!report.verdict_pass);
        assert!(report.margin_max_full > 1.0);
    }

    #[test]
    fn constant_test_function_fails_the_drift_check() {
        let model = ZRModel::new(2, 100, &complete_walk(2), 0.5, 0.5, false).unwrap();
        let t = table(100, 2);
        let report = verify_superharmonic(&model, &t, 0, &vec![1.0; t.count()]).unwrap();
        assert!(!report.verdict_pass);
        assert_eq!(report.margin_max_full, 0.0);
        assert!(report.boundary_ok);
    }

    #[test]
    fn certificate_search_finds_the_two_site_certificate() {
        let model = ZRModel::new(2, 100, &complete_walk(2), 0.5, 0.5, false).unwrap();
        let t = table(100, 2);
        let (g, report) = search_superharmonic_certificate(&model, &t, 0, 8).unwrap();
        assert!(g.c_coeffs.is_empty());
        assert!(report.verdict_pass);
    }

    #[test]
    fn ramp_function_bounds_the_escape_capacity_from_above() {
        let model = ZRModel::complete(2, 60).unwrap();
        let t = table(60, 2);
        let chain = zr_generator(&model, &t).unwrap();
        let (mu, _) = zr_measure(&model, &t).unwrap();
        let q = capacity_test_function_q(&model, &t, &chain, &mu, 1).unwrap();
        let wells = zr_wells(&model, &t).unwrap();
        // 0 on the well, 1 outside the wide well.
        for &i in wells.partition.well(1) {
            assert_eq!(q.values[i], 0.0);
        }
        let wide: std::collections::HashSet<_> = wells.w[1].iter().copied().collect();
        let outside: Vec<usize> =
            (0..t.count()).filter(|i| !wide.contains(i)).collect();
        for &i in &outside {
            assert_eq!(q.values[i], 1.0);
        }
        let cap = capacity(&chain, &mu, wells.partition.well(1), &outside)
            .unwrap()
            .capacity;
        assert!(q.dirichlet >= cap - 1e-14);
        assert!(q.witness.is_finite() && q.witness > 0.0);
    }

    #[test]
    fn ramp_energy_matches_the_per_shell_sum_on_two_sites() {
        let model = ZRModel::complete(2, 100).unwrap();
        let t = table(100, 2);
        let chain = zr_generator(&model, &t).unwrap();
        let (mu, _) = zr_measure(&model, &t).unwrap();
        let q = capacity_test_function_q(&model, &t, &chain, &mu, 1).unwrap();
        // On two sites, shell k is the single configuration (k, n - k);
        // the energy is reported in the sped clock, the model here is not.
        let n = 100usize;
        let theta = model.scales().unwrap().theta;
        let mut direct = Kahan::new();
        for k in 0..n {
            let i = t.rank(&[k as u32, (n - k) as u32]);
            let j = t.rank(&[(k + 1) as u32, (n - k - 1) as u32]);
            let dq = q.values[j] - q.values[i];
            direct.add(0.5 * mu.get(i) * zr_rate_g((n - k) as u64) * dq * dq);
            direct.add(0.5 * mu.get(j) * zr_rate_g((k + 1) as u64) * dq * dq);
        }
        let expect = theta * direct.value();
        assert!((q.dirichlet - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn tubes_are_symmetric_and_pairwise_disjoint() {
        let model = ZRModel::complete(3, 50).unwrap();
        let down = table(49, 3);
        let t01 = tube_indicator(&model, &down, 0, 1).unwrap();
        let t10 = tube_indicator(&model, &down, 1, 0).unwrap();
        assert_eq!(t01, t10);
        let t02 = tube_indicator(&model, &down, 0, 2).unwrap();
        let t12 = tube_indicator(&model, &down, 1, 2).unwrap();
        assert!(t01.iter().any(|&b| b), "tube should be nonempty");
        for i in 0..down.count() {
            let hits = [t01[i], t02[i], t12[i]].iter().filter(|&&b| b).count();
            assert!(hits <= 1, "tubes overlap at rank {i}");
        }
    }

    #[test]
    fn scale_ladder_orders_itself_where_promised() {
        let s = Scales::new(100, 0.25).unwrap();
        assert!(s.ell < s.m && s.m < 100.0);
        assert!(s.u < s.s);
        assert!(s.theta > 0.0 && s.h > 0.0);
        assert!(Scales::new(1, 0.25).is_err());
        assert!(Scales::new(100, 1.5).is_err());
    }

    #[test]
    fn model_validation_rejects_bad_walks_and_exponents() {
        let asym = ZRModel::new(
            2,
            10,
            &[(0, 1, 1.0), (1, 0, 2.0)],
            0.5,
            0.25,
            false,
        );
        assert!(matches!(asym, Err(Error::InvalidModel(_))));
        let gamma_too_big = ZRModel::new(4, 10, &complete_walk(4), 0.6, 0.25, false);
        assert!(matches!(gamma_too_big, Err(Error::InvalidModel(_))));
        let disconnected = ZRModel::new(
            4,
            10,
            &[(0, 1, 1.0), (1, 0, 1.0), (2, 3, 1.0), (3, 2, 1.0)],
            0.25,
            0.25,
            false,
        );
        assert!(matches!(disconnected, Err(Error::NotIrreducible { .. })));
    }

    #[test]
    fn model_spec_parses_and_fills_defaults() {
        let text = "\
# two-site ring
kappa 2
walk_rate 0 1 1.5
delta 0.3
speedup off
";
        let spec = ZRModelSpec::parse(text).unwrap();
        let model = spec.build(Some(40)).unwrap();
        assert_eq!(model.kappa, 2);
        assert_eq!(model.n, 40);
        assert_eq!(model.delta, 0.3);
        assert_eq!(model.gamma, 0.5);
        assert!(!model.speedup);
        assert_eq!(model.walk_rate(0, 1), 1.5);
        assert_eq!(model.walk_rate(1, 0), 1.5);

        let bad = ZRModelSpec::parse("kappa 2\nwobble 3\n");
        match bad {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let missing_n = ZRModelSpec::parse("kappa 2\n").unwrap().build(None);
        assert!(matches!(missing_n, Err(Error::InvalidModel(_))));
    }
}
