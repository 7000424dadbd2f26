//! Dense balanced panels, dataset bundling and seeded replication streams.
//!
//! A [`PanelMatrix`] stores an `n × T` panel in unit-major order, so the time
//! series of unit `i` is the contiguous slice `values[i*T .. (i+1)*T]`.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dgp::Latents;
use crate::error::{Error, Result};

/// Dense `n × T` panel of finite reals, unit-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelMatrix {
    n: usize,
    t: usize,
    values: Vec<f64>,
}

impl PanelMatrix {
    /// Builds a panel from unit-major values, validating shape and finiteness.
    pub fn new(n: usize, t: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || t == 0 {
            return Err(Error::DimensionMismatch(format!(
                "panel dimensions must be positive, got {n}x{t}"
            )));
        }
        if values.len() != n * t {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for a {n}x{t} panel, got {}",
                n * t,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry {
                row: pos / t,
                col: pos % t,
            });
        }
        Ok(Self { n, t, values })
    }

    /// Internal constructor for values produced by arithmetic on validated panels.
    pub(crate) fn from_raw(n: usize, t: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n * t);
        Self { n, t, values }
    }

    pub fn from_fn(n: usize, t: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(n * t);
        for i in 0..n {
            for s in 0..t {
                values.push(f(i, s));
            }
        }
        Self::new(n, t, values)
    }

    pub fn zeros(n: usize, t: usize) -> Self {
        assert!(n > 0 && t > 0, "panel dimensions must be positive");
        Self::from_raw(n, t, vec![0.0; n * t])
    }

    pub fn filled(n: usize, t: usize, value: f64) -> Result<Self> {
        Self::new(n, t, vec![value; n * t])
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn t(&self) -> usize {
        self.t
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.t)
    }

    #[inline]
    pub fn get(&self, i: usize, s: usize) -> f64 {
        self.values[i * self.t + s]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.t..(i + 1) * self.t]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.t)
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    /// Sum of entrywise products, `Σ_it a_it b_it`.
    pub fn dot(&self, other: &PanelMatrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn scaled(&self, c: f64) -> PanelMatrix {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> PanelMatrix {
        Self::from_raw(self.n, self.t, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &PanelMatrix, f: impl Fn(f64, f64) -> f64) -> PanelMatrix {
        assert_eq!(self.shape(), other.shape(), "panel shapes differ");
        Self::from_raw(
            self.n,
            self.t,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sub(&self, other: &PanelMatrix) -> PanelMatrix {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &PanelMatrix) -> PanelMatrix {
        self.zip_map(other, |a, b| a * b)
    }

    /// Time average of each unit, length `n`.
    pub fn unit_means(&self) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().sum::<f64>() / self.t as f64)
            .collect()
    }

    /// Cross-sectional average of each period, length `T`.
    pub fn period_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.t];
        for row in self.rows() {
            for (acc, v) in out.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for v in &mut out {
            *v /= self.n as f64;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Writes the panel CSV format: `n,T` header then one line per unit.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{},{}", self.n, self.t)?;
        let mut line = String::new();
        for row in self.rows() {
            line.clear();
            for (s, v) in row.iter().enumerate() {
                if s > 0 {
                    line.push(',');
                }
                line.push_str(&format_f64(*v));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty panel file".into()))??;
        let (n, t) = parse_header(&header)?;
        let mut rows = Vec::with_capacity(n);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad value `{tok}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        panel_from_rows(n, t, &rows)
    }

    pub fn write_csv_file(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_csv_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let mut parts = header.split(',').map(str::trim);
    let mut dim = |name: &str| -> Result<usize> {
        parts
            .next()
            .ok_or_else(|| Error::Parse(format!("panel header missing {name}")))?
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("panel header {name}: {e}")))
    };
    let n = dim("n")?;
    let t = dim("T")?;
    Ok((n, t))
}

/// Shortest decimal representation that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Builds an `n × T` panel from `n` rows of length `T`.
pub fn panel_from_rows<R: AsRef<[f64]>>(n: usize, t: usize, rows: &[R]) -> Result<PanelMatrix> {
    if rows.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "expected {n} rows, got {}",
            rows.len()
        )));
    }
    let mut values = Vec::with_capacity(n * t);
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has {} entries, expected {t}",
                row.len()
            )));
        }
        values.extend_from_slice(row);
    }
    PanelMatrix::new(n, t, values)
}

/// Outcome panel, `K ≥ 1` regressor panels and optional latent draws.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    pub y: PanelMatrix,
    pub x: Vec<PanelMatrix>,
    pub latents: Option<Latents>,
}

impl PanelDataset {
    pub fn new(y: PanelMatrix, x: Vec<PanelMatrix>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::DimensionMismatch(
                "dataset needs at least one regressor".into(),
            ));
        }
        for (k, xk) in x.iter().enumerate() {
            if xk.shape() != y.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "regressor {k} is {}x{}, outcome is {}x{}",
                    xk.n(),
                    xk.t(),
                    y.n(),
                    y.t()
                )));
            }
        }
        Ok(Self {
            y,
            x,
            latents: None,
        })
    }

    pub fn with_latents(mut self, latents: Latents) -> Self {
        self.latents = Some(latents);
        self
    }

    pub fn n(&self) -> usize {
        self.y.n()
    }

    pub fn t(&self) -> usize {
        self.y.t()
    }
}

/// Random stream type handed to every simulation and randomized estimator.
pub type RandomStream = ChaCha8Rng;

/// Independent purposes that may draw randomness within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamLane {
    Simulation,
    Estimation,
}

impl StreamLane {
    fn tag(self) -> u64 {
        match self {
            StreamLane::Simulation => 0,
            StreamLane::Estimation => 1,
        }
    }
}

/// Master seed from which per-replication streams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn stream(&self, replication: u64) -> RandomStream {
        derive_stream(*self, replication)
    }

    pub fn lane_stream(&self, lane: StreamLane, replication: u64) -> RandomStream {
        derive_lane_stream(*self, lane, replication)
    }
}

/// Simulation stream for replication `m`.
pub fn derive_stream(seed: SeedSpec, replication: u64) -> RandomStream {
    derive_lane_stream(seed, StreamLane::Simulation, replication)
}

/// The key is expanded from `(master_seed, lane)` with splitmix64 and the
/// replication index selects the ChaCha stream, so every `(seed, lane, m)`
/// triple maps to its own non-overlapping sequence.
pub fn derive_lane_stream(seed: SeedSpec, lane: StreamLane, replication: u64) -> RandomStream {
    let mut state = seed.master_seed ^ lane.tag().wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replication);
    rng
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn one_by_one_panel() {
        let p = panel_from_rows(1, 1, &[[3.5]]).unwrap();
        assert_eq!(p.get(0, 0), 3.5);
    }

    #[test]
    fn entry_lookup_is_unit_major() {
        let p = panel_from_rows(2, 3, &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(p.get(1, 2), 6.0);
        assert_eq!(p.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = panel_from_rows(2, 2, &[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn non_finite_rejected() {
        let err = panel_from_rows(2, 2, &[vec![1.0, f64::NAN], vec![3.0, 4.0]]).unwrap_err();
        assert_eq!(err, Error::NonFiniteEntry { row: 0, col: 1 });
        let err = PanelMatrix::new(1, 2, vec![1.0, f64::INFINITY]).unwrap_err();
        assert_eq!(err, Error::NonFiniteEntry { row: 0, col: 1 });
    }

    #[test]
    fn dataset_rejects_mismatched_regressors() {
        let y = PanelMatrix::zeros(3, 4);
        let x = PanelMatrix::zeros(3, 5);
        assert!(matches!(
            PanelDataset::new(y, vec![x]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let vals = [0.1, -1.0 / 3.0, 1e-300, 6.02e23, -0.0, 2.0];
        let p = PanelMatrix::new(2, 3, vals.to_vec()).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("2,3\n"));
        let back = PanelMatrix::read_csv(&buf[..]).unwrap();
        for (a, b) in p.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_with_wrong_row_length_fails() {
        let text = "2,2\n1,2\n3\n";
        assert!(matches!(
            PanelMatrix::read_csv(text.as_bytes()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    fn draws(mut rng: RandomStream, k: usize) -> Vec<u64> {
        (0..k).map(|_| rng.random::<u64>()).collect()
    }

    #[test]
    fn same_seed_and_replication_repeat() {
        let seed = SeedSpec::new(42);
        assert_eq!(draws(derive_stream(seed, 3), 1000), draws(derive_stream(seed, 3), 1000));
    }

    #[test]
    fn replications_get_distinct_streams() {
        let seed = SeedSpec::new(42);
        assert_ne!(draws(derive_stream(seed, 0), 1000), draws(derive_stream(seed, 1), 1000));
        assert_ne!(
            draws(seed.lane_stream(StreamLane::Simulation, 0), 100),
            draws(seed.lane_stream(StreamLane::Estimation, 0), 100)
        );
    }

    #[test]
    fn stream_is_independent_of_invocation_order() {
        let seed = SeedSpec::new(7);
        let forward: Vec<_> = (0..20).map(|m| draws(derive_stream(seed, m), 50)).collect();
        let mut order: Vec<u64> = (0..20).collect();
        order.reverse();
        order.swap(3, 11);
        for m in order {
            assert_eq!(draws(derive_stream(seed, m), 50), forward[m as usize]);
        }
    }

    #[test]
    fn first_ten_thousand_draws_are_pinned() {
        // Frozen digests guard against accidental changes to the derivation rule.
        let seed = SeedSpec::new(2024);
        let mut acc = 0u64;
        for m in 0..100 {
            for v in draws(derive_stream(seed, m), 10_000) {
                acc = acc.rotate_left(5) ^ v;
            }
        }
        assert_eq!(acc, 16_994_359_575_788_254_834);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rows_round_trip(n in 1usize..6, t in 1usize..6, seed in any::<u64>()) {
                let mut rng = derive_stream(SeedSpec::new(seed), 0);
                let rows: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..t).map(|_| rng.random::<f64>() * 200.0 - 100.0).collect())
                    .collect();
                let p = panel_from_rows(n, t, &rows).unwrap();
                for (i, row) in rows.iter().enumerate() {
                    for (s, v) in row.iter().enumerate() {
                        prop_assert_eq!(p.get(i, s).to_bits(), v.to_bits());
                    }
                }
                let mut buf = Vec::new();
                p.write_csv(&mut buf).unwrap();
                prop_assert_eq!(PanelMatrix::read_csv(&buf[..]).unwrap(), p);
            }
        }
    }
}
