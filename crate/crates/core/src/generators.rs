//! Synthetic-data generators behind one interface: built-in baselines, the
//! leaky and noise-anonymizer risk models, and external commands that follow
//! the file-based adapter protocol.
//!
//! Adapter protocol: the command template may use `{train}` (input CSV path),
//! `{schema}` (schema JSON path), `{out}` (output CSV path), `{size}` and
//! `{seed}`. The command must exit 0 after writing exactly `{size}` rows that
//! conform to the schema to `{out}`.

use std::fmt;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::seeded_rng;
use crate::tabular::{self, Cell, ColumnKind, Table, TableError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);
const PLACEHOLDERS: [&str; 5] = ["{train}", "{schema}", "{out}", "{size}", "{seed}"];

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid generator parameter: {0}")]
    Parameter(String),
    #[error("insufficient control rows: need {needed}, have {available}")]
    InsufficientControl { needed: usize, available: usize },
    #[error("requested {requested} rows but the training table has only {available}")]
    InsufficientTrain { requested: usize, available: usize },
    #[error("could not start adapter command `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("adapter exited with code {code:?}; stderr: {stderr}")]
    NonZeroExit { code: Option<i32>, stderr: String },
    #[error("adapter timed out after {0:?}")]
    Timeout(Duration),
    #[error("adapter output violates the contract ({clause}): {detail}")]
    Output { clause: &'static str, detail: String },
    #[error("adapter i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Table(#[from] TableError),
}

pub type Result<T> = std::result::Result<T, GenerateError>;

/// An external generator invoked through the adapter protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalAdapter {
    pub command_template: String,
    pub timeout: Duration,
    /// Parent directory for the per-run working directories (system temp if
    /// absent).
    pub workdir: Option<PathBuf>,
}

impl ExternalAdapter {
    pub fn new(command_template: impl Into<String>) -> Self {
        ExternalAdapter {
            command_template: command_template.into(),
            timeout: DEFAULT_TIMEOUT,
            workdir: None,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

#[derive(Debug, Clone)]
pub enum GeneratorSpec {
    /// Every cell drawn independently from its column's empirical marginal.
    IndependentMarginals,
    /// Returns the training rows.
    Identity,
    /// Fraction `p` of rows copied from the training set, the rest from a
    /// disjoint control table of the same distribution.
    Leaky { p: f64, control: Arc<Table> },
    /// Marginal-preserving per-cell noise of strength `alpha`.
    Anonymizer { alpha: f64 },
    External(ExternalAdapter),
}

impl GeneratorSpec {
    pub fn leaky(p: f64, control: Table) -> Result<Self> {
        check_unit("leak fraction p", p)?;
        Ok(GeneratorSpec::Leaky {
            p,
            control: Arc::new(control),
        })
    }

    pub fn anonymizer(alpha: f64) -> Result<Self> {
        check_unit("noise level alpha", alpha)?;
        Ok(GeneratorSpec::Anonymizer { alpha })
    }

    pub fn external(adapter: ExternalAdapter) -> Result<Self> {
        if !adapter.command_template.contains("{out}") {
            return Err(GenerateError::Parameter(
                "external command template must contain the {out} placeholder".into(),
            ));
        }
        Ok(GeneratorSpec::External(adapter))
    }

    /// Short label in the flag syntax (`risk:leaky:p=0.5`, ...).
    pub fn describe(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorSpec::IndependentMarginals => f.write_str("builtin:independent_marginals"),
            GeneratorSpec::Identity => f.write_str("builtin:identity"),
            GeneratorSpec::Leaky { p, .. } => write!(f, "risk:leaky:p={p}"),
            GeneratorSpec::Anonymizer { alpha } => write!(f, "risk:anonymizer:alpha={alpha}"),
            GeneratorSpec::External(a) => write!(f, "exec:{}", a.command_template),
        }
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(GenerateError::Parameter(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Synthetic table of exactly `size` rows with row ids `0..size`.
pub fn generate(spec: &GeneratorSpec, train: &Table, size: usize, seed: u64) -> Result<Table> {
    if size == 0 {
        return Err(GenerateError::Parameter("size must be at least 1".into()));
    }
    if train.is_empty() {
        return Err(GenerateError::Parameter("training table is empty".into()));
    }
    let out = match spec {
        GeneratorSpec::IndependentMarginals => gen_independent_marginals(train, size, seed),
        GeneratorSpec::Identity => {
            let idx: Vec<usize> = (0..size).map(|i| i % train.len()).collect();
            train.select(&idx)
        }
        GeneratorSpec::Leaky { p, control } => gen_leaky(train, control, *p, size, seed)?,
        GeneratorSpec::Anonymizer { alpha } => {
            if size != train.len() {
                return Err(GenerateError::Parameter(format!(
                    "the anonymizer outputs |train| = {} rows, {size} requested",
                    train.len()
                )));
            }
            anonymize(train, *alpha, seed)?
        }
        GeneratorSpec::External(adapter) => run_external(adapter, train, size, seed)?,
    };
    Ok(out.with_fresh_ids(0))
}

pub fn gen_independent_marginals(train: &Table, size: usize, seed: u64) -> Table {
    let mut rng = seeded_rng(seed);
    let n = train.len();
    let m = train.n_columns();
    let mut rows = vec![Vec::with_capacity(m); size];
    for j in 0..m {
        for row in rows.iter_mut() {
            row.push(train.row(rng.random_range(0..n))[j].clone());
        }
    }
    Table::from_rows(train.schema_arc().clone(), rows).expect("cells come from a valid table")
}

/// `round(p * size)` rows without replacement from `train` (round half up),
/// the remainder from `control`, shuffled together.
pub fn gen_leaky(train: &Table, control: &Table, p: f64, size: usize, seed: u64) -> Result<Table> {
    check_unit("leak fraction p", p)?;
    if control.schema() != train.schema() {
        return Err(TableError::SchemaMismatch("control and training schemas differ".into()).into());
    }
    if size > train.len() {
        return Err(GenerateError::InsufficientTrain {
            requested: size,
            available: train.len(),
        });
    }
    let leaked = leaked_count(p, size);
    let from_control = size - leaked;
    if control.len() < from_control.max(size) {
        return Err(GenerateError::InsufficientControl {
            needed: size,
            available: control.len(),
        });
    }
    let mut rng = seeded_rng(seed);
    let train_idx: Vec<usize> = rand::seq::index::sample(&mut rng, train.len(), leaked).into_vec();
    let control_idx: Vec<usize> =
        rand::seq::index::sample(&mut rng, control.len(), from_control).into_vec();
    let mut rows: Vec<Vec<Cell>> = train_idx.iter().map(|&i| train.row(i).to_vec()).collect();
    rows.extend(control_idx.iter().map(|&i| control.row(i).to_vec()));
    rows.shuffle(&mut rng);
    Ok(Table::from_rows(train.schema_arc().clone(), rows)?)
}

pub fn leaked_count(p: f64, size: usize) -> usize {
    ((p * size as f64) + 0.5).floor() as usize
}

/// Numerical mixing weight `alpha^3`.
pub fn numeric_noise(alpha: f64) -> f64 {
    alpha.powi(3)
}

/// Categorical resampling probability `alpha^2`.
pub fn categorical_noise(alpha: f64) -> f64 {
    alpha.powi(2)
}

/// Per-cell marginal-preserving perturbation. Numerical cells map through the
/// column's quantile normalization, mix with standard normal noise
/// (`sqrt(1-a) z + sqrt(a) eps`, `a = alpha^3`) and map back; categorical
/// cells are redrawn from the column marginal with probability `alpha^2`.
pub fn anonymize(train: &Table, alpha: f64, seed: u64) -> Result<Table> {
    check_unit("noise level alpha", alpha)?;
    let a_num = numeric_noise(alpha);
    let a_cat = categorical_noise(alpha);
    let mut rng = seeded_rng(seed);
    let n = train.len();
    let mut rows: Vec<Vec<Cell>> = train.rows().to_vec();
    for (j, col) in train.schema().columns().iter().enumerate() {
        match col.kind {
            ColumnKind::Numerical => {
                let values = train.numeric_column(j);
                // A single value has nothing to mix with: keep it.
                let qmap = if n >= 2 {
                    Some(tabular::fit_quantile_map(&values)?)
                } else {
                    None
                };
                let (keep, mix) = ((1.0 - a_num).sqrt(), a_num.sqrt());
                for (row, &x) in rows.iter_mut().zip(&values) {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    if let (Some(q), true) = (&qmap, a_num > 0.0) {
                        row[j] = Cell::Num(q.inverse(keep * q.forward(x) + mix * eps));
                    }
                }
            }
            ColumnKind::Categorical => {
                let column = train.column(j);
                for row in rows.iter_mut() {
                    if rng.random::<f64>() < a_cat {
                        row[j] = column.choose(&mut rng).expect("non-empty").clone();
                    }
                }
            }
        }
    }
    Ok(Table::new(train.schema_arc().clone(), rows, train.row_ids().to_vec())?)
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

/// Runs an external adapter in a fresh working directory and validates its
/// output against the training schema and the requested row count.
pub fn run_external(adapter: &ExternalAdapter, train: &Table, size: usize, seed: u64) -> Result<Table> {
    if !PLACEHOLDERS.iter().any(|p| adapter.command_template.contains(p)) {
        return Err(GenerateError::Parameter(
            "command template uses none of the adapter placeholders".into(),
        ));
    }
    let dir = match &adapter.workdir {
        Some(parent) => {
            fs::create_dir_all(parent)?;
            tempfile::Builder::new().prefix("adapter-").tempdir_in(parent)?
        }
        None => tempfile::Builder::new().prefix("adapter-").tempdir()?,
    };
    let train_path = dir.path().join("train.csv");
    let schema_path = dir.path().join("schema.json");
    let out_path = dir.path().join("out.csv");
    train.save_csv(&train_path)?;
    fs::write(&schema_path, train.schema().to_json())?;

    let command = adapter
        .command_template
        .replace("{train}", &shell_quote(&train_path))
        .replace("{schema}", &shell_quote(&schema_path))
        .replace("{out}", &shell_quote(&out_path))
        .replace("{size}", &size.to_string())
        .replace("{seed}", &seed.to_string());
    let stdout_path = dir.path().join("stdout.log");
    let stderr_path = dir.path().join("stderr.log");
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .current_dir(dir.path())
        .stdin(Stdio::null())
        .stdout(File::create(&stdout_path)?)
        .stderr(File::create(&stderr_path)?)
        .spawn()
        .map_err(|source| GenerateError::Spawn {
            command: command.clone(),
            source,
        })?;
    let status = match child.wait_timeout(adapter.timeout)? {
        Some(status) => status,
        None => {
            child.kill().ok();
            child.wait().ok();
            return Err(GenerateError::Timeout(adapter.timeout));
        }
    };
    if !status.success() {
        let stderr = fs::read_to_string(&stderr_path).unwrap_or_default();
        return Err(GenerateError::NonZeroExit {
            code: status.code(),
            stderr: stderr.trim_end().to_string(),
        });
    }
    let file = File::open(&out_path).map_err(|e| GenerateError::Output {
        clause: "write {out}",
        detail: e.to_string(),
    })?;
    let table = tabular::read_table(file, train.schema_arc().clone()).map_err(|e| {
        GenerateError::Output {
            clause: "schema-conforming rows",
            detail: e.to_string(),
        }
    })?;
    if table.len() != size {
        return Err(GenerateError::Output {
            clause: "exactly {size} rows",
            detail: format!("expected {size} rows, found {}", table.len()),
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_statistic, total_variation};
    use crate::tabular::{Column, Schema};
    use std::collections::HashSet;

    fn mixed_table(n: usize, seed: u64, offset: f64) -> Table {
        let schema = Arc::new(
            Schema::new(vec![
                Column::numerical("x"),
                Column::categorical("c"),
                Column::numerical("y"),
            ])
            .unwrap(),
        );
        let mut rng = seeded_rng(seed);
        let rows = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let k = ["a", "b", "c", "d"][rng.random_range(0..4usize).min(rng.random_range(0..4))];
                vec![
                    Cell::Num(z * 3.0 + offset),
                    Cell::cat(k),
                    Cell::Num(rng.random_range(0.0..1.0f64).powi(2)),
                ]
            })
            .collect();
        Table::from_rows(schema, rows).unwrap()
    }

    fn row_set(t: &Table) -> HashSet<String> {
        t.rows().iter().map(|r| format!("{r:?}")).collect()
    }

    #[test]
    fn identity_copies_rows() {
        let t = mixed_table(10, 1, 0.0).select(&[3, 1, 4, 0, 5, 9, 2, 6, 8, 7]);
        let s = generate(&GeneratorSpec::Identity, &t, 10, 0).unwrap();
        assert_eq!(s.rows(), t.rows());
        assert_eq!(s.row_ids(), (0..10).collect::<Vec<u64>>().as_slice());
    }

    #[test]
    fn marginals_of_single_row_and_constant_column() {
        let t = mixed_table(1, 2, 0.0);
        let s = gen_independent_marginals(&t, 7, 3);
        assert!(s.rows().iter().all(|r| r == t.row(0)));
    }

    #[test]
    fn marginals_match_columns() {
        let t = mixed_table(2000, 3, 0.0);
        let s = gen_independent_marginals(&t, 10_000, 4);
        for j in [0, 2] {
            assert!(ks_statistic(&t.numeric_column(j), &s.numeric_column(j)).unwrap() <= 0.05);
        }
        let cats = |t: &Table| t.column(1).iter().map(|c| c.as_cat().unwrap().to_string()).collect::<Vec<_>>();
        assert!(total_variation(&cats(&t), &cats(&s)).unwrap() <= 0.05);
    }

    #[test]
    fn leaky_counts_are_exact() {
        let train = mixed_table(4, 5, 0.0);
        let control = mixed_table(4, 6, 100.0);
        let s = gen_leaky(&train, &control, 0.5, 4, 1).unwrap();
        let from_train = row_set(&s).intersection(&row_set(&train)).count();
        assert_eq!(from_train, 2);
        assert_eq!(s.len(), 4);

        let full = gen_leaky(&train, &control, 1.0, 4, 2).unwrap();
        assert_eq!(row_set(&full), row_set(&train));
        let none = gen_leaky(&train, &control, 0.0, 4, 2).unwrap();
        assert!(row_set(&none).is_disjoint(&row_set(&train)));
    }

    #[test]
    fn leaky_rounds_half_up_and_checks_control() {
        assert_eq!(leaked_count(0.5, 5), 3);
        assert_eq!(leaked_count(0.25, 10), 3);
        assert_eq!(leaked_count(0.0, 10), 0);
        let train = mixed_table(10, 1, 0.0);
        let small = mixed_table(3, 2, 50.0);
        assert!(matches!(
            gen_leaky(&train, &small, 0.5, 10, 0),
            Err(GenerateError::InsufficientControl { .. })
        ));
        assert!(gen_leaky(&train, &mixed_table(20, 2, 50.0), 0.5, 11, 0).is_err());
        assert!(GeneratorSpec::leaky(1.5, small).is_err());
    }

    proptest::proptest! {
        #[test]
        fn leaky_composition(n in 1usize..60, p in 0.0f64..=1.0, seed in 0u64..1000) {
            let train = mixed_table(n, seed, 0.0);
            let control = mixed_table(n + 5, seed + 1, 1000.0);
            let size = n;
            let s = gen_leaky(&train, &control, p, size, seed).unwrap();
            let tr = row_set(&train);
            let got = s.rows().iter().filter(|r| tr.contains(&format!("{r:?}"))).count();
            proptest::prop_assert_eq!(got, leaked_count(p, size));
            proptest::prop_assert_eq!(s.len(), size);
        }
    }

    #[test]
    fn anonymize_identity_at_zero() {
        let t = mixed_table(300, 7, 0.0);
        let s = anonymize(&t, 0.0, 1).unwrap();
        assert_eq!(s.rows(), t.rows());
    }

    #[test]
    fn noise_schedule() {
        assert_eq!(numeric_noise(0.5), 0.125);
        assert_eq!(categorical_noise(0.5), 0.25);
        assert!(GeneratorSpec::anonymizer(-0.1).is_err());
    }

    #[test]
    fn anonymize_full_noise_is_independent_of_input() {
        let t = mixed_table(500, 8, 0.0);
        let s = anonymize(&t, 1.0, 2).unwrap();
        let q = tabular::fit_quantile_map(&t.numeric_column(0)).unwrap();
        // with alpha = 1 every numerical cell is f^-1(eps); replay the draws
        let mut rng = seeded_rng(2);
        for i in 0..t.len() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            assert!((s.row(i)[0].as_num().unwrap() - q.inverse(eps)).abs() < 1e-12);
        }
        let x: Vec<f64> = t.numeric_column(0);
        let y: Vec<f64> = s.numeric_column(0);
        let corr = crate::stats::spearman(&x, &y).unwrap();
        assert!(corr.abs() < 0.15, "{corr}");
    }

    #[test]
    fn anonymize_preserves_marginals() {
        let t = mixed_table(10_000, 9, 0.0);
        let cats = |t: &Table| t.column(1).iter().map(|c| c.as_cat().unwrap().to_string()).collect::<Vec<_>>();
        for alpha in [0.25, 0.5, 1.0] {
            let s = anonymize(&t, alpha, 3).unwrap();
            for j in [0, 2] {
                assert!(ks_statistic(&t.numeric_column(j), &s.numeric_column(j)).unwrap() <= 0.05);
            }
            assert!(total_variation(&cats(&t), &cats(&s)).unwrap() <= 0.03);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let t = mixed_table(50, 10, 0.0);
        let c = mixed_table(60, 11, 9.0);
        for spec in [
            GeneratorSpec::IndependentMarginals,
            GeneratorSpec::leaky(0.3, c).unwrap(),
            GeneratorSpec::anonymizer(0.6).unwrap(),
        ] {
            let a = generate(&spec, &t, 50, 5).unwrap();
            let b = generate(&spec, &t, 50, 5).unwrap();
            assert_eq!(a.rows(), b.rows(), "{spec}");
        }
    }

    #[cfg(unix)]
    mod external {
        use super::*;

        #[test]
        fn copy_adapter_behaves_like_identity() {
            let t = mixed_table(20, 1, 0.0);
            let ad = ExternalAdapter::new("cp {train} {out}");
            let s = generate(&GeneratorSpec::external(ad).unwrap(), &t, 20, 0).unwrap();
            assert_eq!(s.rows(), t.rows());
        }

        #[test]
        fn nonzero_exit_carries_code_and_stderr() {
            let t = mixed_table(5, 1, 0.0);
            let ad = ExternalAdapter::new("echo broken >&2; exit 3 # {out}");
            match run_external(&ad, &t, 5, 0) {
                Err(GenerateError::NonZeroExit { code, stderr }) => {
                    assert_eq!(code, Some(3));
                    assert_eq!(stderr, "broken");
                }
                other => panic!("{other:?}"),
            }
        }

        #[test]
        fn short_output_is_a_row_count_violation() {
            let t = mixed_table(6, 1, 0.0);
            let ad = ExternalAdapter::new("head -n {size} {train} > {out}");
            match run_external(&ad, &t, 6, 0) {
                Err(GenerateError::Output { clause, .. }) => assert_eq!(clause, "exactly {size} rows"),
                other => panic!("{other:?}"),
            }
        }

        #[test]
        fn malformed_output_is_a_schema_violation() {
            let t = mixed_table(3, 1, 0.0);
            let ad = ExternalAdapter::new("printf 'a,b\\n1,2\\n' > {out}");
            match run_external(&ad, &t, 1, 0) {
                Err(GenerateError::Output { clause, .. }) => assert_eq!(clause, "schema-conforming rows"),
                other => panic!("{other:?}"),
            }
            let missing = ExternalAdapter::new("true {out}");
            assert!(matches!(run_external(&missing, &t, 1, 0), Err(GenerateError::Output { .. })));
        }

        #[test]
        fn timeout_is_enforced() {
            let t = mixed_table(3, 1, 0.0);
            let ad = ExternalAdapter::new("sleep 5; cp {train} {out}").with_timeout(Duration::from_millis(200));
            assert!(matches!(run_external(&ad, &t, 3, 0), Err(GenerateError::Timeout(_))));
        }

        #[test]
        fn placeholders_are_substituted() {
            let t = mixed_table(4, 1, 0.0);
            let ad = ExternalAdapter::new(
                "test -f {schema} && test {size} = 2 && test {seed} = 17 && head -n 3 {train} > {out}",
            );
            let s = run_external(&ad, &t, 2, 17).unwrap();
            assert_eq!(s.rows(), &t.rows()[..2]);
        }
    }
}
