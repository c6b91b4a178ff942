//! Wall-clock scaling of noise generation and neighbor search.

use std::hint::black_box;
use std::time::Instant;

use lnsr_core::manifold::{gram_schmidt, sample_inmanifold_noise, NeighborIndex};
use lnsr_core::noise::sample_standard_noise;
use lnsr_core::rng::{self, Rng};
use lnsr_core::stats::loglog_slope;
use lnsr_core::Tensor;

use crate::error::Result;
use crate::report::Table;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchParams {
    pub reps: usize,
    /// `(M, d)` shapes for standard noise.
    pub noise_shapes: Vec<(usize, usize)>,
    /// Neighborhood sizes for in-manifold sampling.
    pub ks: Vec<usize>,
    /// Vectors drawn per in-manifold timing.
    pub samples: usize,
    pub dim: usize,
    /// Index sizes for the neighbor search.
    pub index_sizes: Vec<usize>,
    pub queries: usize,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            reps: 7,
            noise_shapes: vec![(1024, 64), (2048, 64), (4096, 64), (8192, 64), (16384, 64)],
            ks: vec![5, 10, 20, 40],
            samples: 2000,
            dim: 256,
            index_sizes: vec![500, 1000, 2000, 4000],
            queries: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: &'static str,
    pub sizes: Vec<f64>,
    pub medians: Vec<f64>,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub standard_noise: Series,
    pub inmanifold_k: Series,
    pub knn_n: Series,
}

impl BenchReport {
    pub fn series(&self) -> [&Series; 3] {
        [&self.standard_noise, &self.inmanifold_k, &self.knn_n]
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new("bench", &["series", "size", "median_s", "exponent"]);
        for s in self.series() {
            for (x, m) in s.sizes.iter().zip(&s.medians) {
                t.push(vec![s.name.into(), (*x).into(), (*m).into(), s.exponent.into()]);
            }
        }
        t
    }
}

fn median_time(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

fn fit(name: &'static str, sizes: Vec<f64>, medians: Vec<f64>) -> Result<Series> {
    let exponent = loglog_slope(&sizes, &medians)?;
    Ok(Series {
        name,
        sizes,
        medians,
        exponent,
    })
}

fn random_rows(n: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng::standard_normal(rng)).collect())
        .collect()
}

fn reject_empty(what: &str, sizes: impl IntoIterator<Item = usize>) -> Result<()> {
    let sizes: Vec<usize> = sizes.into_iter().collect();
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(lnsr_core::Error::Contract(format!("{what}: need at least two nonzero sizes")).into());
    }
    Ok(())
}

/// Times the three series on the calling thread and fits log-log slopes.
pub fn bench_complexity(p: &BenchParams) -> Result<BenchReport> {
    if p.reps < 5 {
        return Err(lnsr_core::Error::Contract("at least 5 repetitions".into()).into());
    }
    reject_empty("noise shapes", p.noise_shapes.iter().map(|(m, d)| m * d))?;
    reject_empty("neighbor counts", p.ks.iter().copied())?;
    reject_empty("index sizes", p.index_sizes.iter().copied())?;
    if p.samples == 0 || p.dim == 0 || p.queries == 0 {
        return Err(lnsr_core::Error::Contract("zero-length input".into()).into());
    }
    let mut rng = rng::seeded(p.seed);

    let mut sizes = Vec::new();
    let mut medians = Vec::new();
    for &(m, d) in &p.noise_shapes {
        let t = median_time(p.reps, || {
            black_box(sample_standard_noise(&[m, d], 1.0, &mut rng).expect("valid shape"));
        });
        sizes.push((m * d) as f64);
        medians.push(t);
    }
    let standard_noise = fit("standard_noise_md", sizes, medians)?;

    let x: Vec<f64> = (0..p.dim).map(|_| rng::standard_normal(&mut rng)).collect();
    let mut sizes = Vec::new();
    let mut medians = Vec::new();
    for &k in &p.ks {
        let basis = gram_schmidt(&random_rows(k, p.dim, &mut rng))?;
        let t = median_time(p.reps, || {
            for _ in 0..p.samples {
                black_box(sample_inmanifold_noise(&x, &basis, 1.0, &mut rng, None).expect("valid basis"));
            }
        });
        sizes.push(k as f64);
        medians.push(t);
    }
    let inmanifold_k = fit("inmanifold_k", sizes, medians)?;

    let k = 10;
    let mut sizes = Vec::new();
    let mut medians = Vec::new();
    for &n in &p.index_sizes {
        let data: Vec<f64> = random_rows(n, p.dim, &mut rng).concat();
        let index = NeighborIndex::build(Tensor::new(vec![n, p.dim], data)?)?;
        let queries = random_rows(p.queries, p.dim, &mut rng);
        let t = median_time(p.reps, || {
            for q in &queries {
                black_box(index.knn(q, k.min(n), false).expect("valid query"));
            }
        });
        sizes.push(n as f64);
        medians.push(t);
    }
    let knn_n = fit("knn_n", sizes, medians)?;

    Ok(BenchReport {
        standard_noise,
        inmanifold_k,
        knn_n,
    })
}
