#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use remia_core::{seeded_rng, Cell, Column, Schema, Table};

const CENTERS: [[f64; 4]; 3] = [[0.0, 0.0, 0.0, 0.0], [2.5, -1.0, 1.0, 0.5], [-1.5, 2.0, -2.0, 1.5]];

pub fn mixture_schema() -> Arc<Schema> {
    Arc::new(
        Schema::new(vec![
            Column::numerical("x1"),
            Column::numerical("x2"),
            Column::numerical("x3"),
            Column::numerical("x4"),
            Column::categorical("group"),
            Column::categorical("flag"),
        ])
        .unwrap(),
    )
}

/// Three-component Gaussian mixture in four numerical columns; `group`
/// follows the component 80% of the time, `flag` is an independent coin.
pub fn mixture(n: usize, seed: u64) -> Table {
    let mut rng = seeded_rng(seed);
    let rows = (0..n)
        .map(|_| {
            let k = rng.random_range(0..3);
            let mut row: Vec<Cell> = CENTERS[k]
                .iter()
                .map(|c| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    Cell::Num(c + e)
                })
                .collect();
            let g = if rng.random_bool(0.8) { k } else { rng.random_range(0..3) };
            row.push(Cell::cat(["a", "b", "c"][g]));
            row.push(Cell::cat(["y", "n"][rng.random_range(0..2)]));
            row
        })
        .collect();
    Table::from_rows(mixture_schema(), rows).unwrap()
}

pub const CLUSTER_DIMS: usize = 8;

/// Three unit-variance Gaussian clusters in eight numerical columns with
/// centers drawn once from [-2, 2]^8, plus the cluster label. Enough
/// dimensions that a density estimate can resolve individual records.
pub fn clustered(n: usize, seed: u64) -> Table {
    let columns: Vec<Column> = (0..CLUSTER_DIMS)
        .map(|j| Column::numerical(format!("z{j}")))
        .chain([Column::categorical("cluster")])
        .collect();
    let schema = Arc::new(Schema::new(columns).unwrap());
    let mut crng = seeded_rng(999);
    let centers: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..CLUSTER_DIMS).map(|_| crng.random_range(-2.0..2.0)).collect())
        .collect();
    let mut rng = seeded_rng(seed);
    let rows = (0..n)
        .map(|_| {
            let k = rng.random_range(0..3);
            let mut row: Vec<Cell> = centers[k]
                .iter()
                .map(|c| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    Cell::Num(c + e)
                })
                .collect();
            row.push(Cell::cat(["a", "b", "c"][k]));
            row
        })
        .collect();
    Table::from_rows(schema, rows).unwrap()
}

/// Uniform noise over each numerical column's observed range and uniform
/// categories over the observed values.
pub fn uniform_noise_like(t: &Table, n: usize, seed: u64) -> Table {
    let mut rng = seeded_rng(seed);
    let schema = t.schema_arc().clone();
    let ranges: Vec<(f64, f64)> = (0..t.n_columns())
        .map(|j| match t.row(0)[j] {
            Cell::Num(_) => {
                let v = t.numeric_column(j);
                (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            }
            Cell::Cat(_) => (0.0, 0.0),
        })
        .collect();
    let vocab: Vec<Vec<Cell>> = (0..t.n_columns())
        .map(|j| {
            let mut seen: Vec<Cell> = Vec::new();
            for c in t.column(j) {
                if matches!(c, Cell::Cat(_)) && !seen.contains(&c) {
                    seen.push(c);
                }
            }
            seen
        })
        .collect();
    let rows = (0..n)
        .map(|_| {
            (0..t.n_columns())
                .map(|j| {
                    if vocab[j].is_empty() {
                        Cell::Num(rng.random_range(ranges[j].0..=ranges[j].1))
                    } else {
                        vocab[j][rng.random_range(0..vocab[j].len())].clone()
                    }
                })
                .collect()
        })
        .collect();
    Table::from_rows(schema, rows).unwrap()
}
