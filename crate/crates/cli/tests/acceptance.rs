//! Acceptance run: the full verification suite on the default gallery
//! configuration at full size, one line per criterion, plus a dense
//! eigensolver cross-check of the eigenvalue route and a byte comparison of
//! two `verify` reports.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use qsd_cli::{cmd_verify_with, CheckResult, ProblemConfig, Verdict};
use qsd_core::coefficients::GalleryModel;
use qsd_core::discretize::assemble_generator;
use qsd_core::{BoxDomain, Grid};

const CONFIG: &str = include_str!("../../../configs/bm1d.conf");

/// Stated runtime bounds per criterion, in seconds.
const BOUNDS: [u64; 13] = [10, 10, 30, 180, 180, 600, 240, 300, 10, 30, 120, 60, 600];

/// Smallest eigenvalue of `-A` at 64 cells by a dense eigensolver.
fn dense_oracle() -> f64 {
    let model = GalleryModel::DriftedBrownian { m: 1.0, sigma: 1.0 };
    let grid = Grid::new(BoxDomain::interval(1.0).unwrap(), &[64]).unwrap();
    let op = assemble_generator(&model, &grid).unwrap();
    let d = op.matrix().to_dense();
    let n = op.size();
    DMatrix::from_fn(n, n, |r, c| -d[r][c])
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min)
}

fn line(id: u32, ok: bool, name: &str, elapsed: Duration, detail: &str) {
    println!(
        "criterion {id:>2} {} {name} ({:.1} s){}{detail}",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        if detail.is_empty() { "" } else { ": " }
    );
}

fn summary(r: &CheckResult) -> String {
    let values: Vec<String> = r
        .values
        .iter()
        .map(|(k, v)| format!("{k}={v:.6e}"))
        .collect();
    let mut s = values.join(" ");
    if !r.detail.is_empty() {
        s.push_str(" | ");
        s.push_str(&r.detail);
    }
    s
}

fn main() -> ExitCode {
    let config = ProblemConfig::parse(CONFIG).expect("default config parses");
    let dir = tempfile::TempDir::new().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let mut all_ok = true;

    // Criterion 1's eigenvalue route, confirmed against a dense solve on a
    // coarse grid: the sparse route at 64 cells must reproduce it.
    let oracle = dense_oracle();
    let sparse64 = {
        let model = GalleryModel::DriftedBrownian { m: 1.0, sigma: 1.0 };
        let grid = Grid::new(BoxDomain::interval(1.0).unwrap(), &[64]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        qsd_core::eigen::principal_eigenpair(&op, 1e-12, 10_000)
            .unwrap()
            .lambda
    };
    let oracle_ok = (oracle - sparse64).abs() <= 1e-9 * oracle;

    let mut clock = Instant::now();
    let report = cmd_verify_with(&config, Some(&first), |r| {
        let elapsed = clock.elapsed();
        let in_time = elapsed <= Duration::from_secs(BOUNDS[(r.id - 1) as usize]);
        let mut ok = r.verdict == Verdict::Pass && in_time;
        let mut detail = summary(r);
        if r.id == 1 {
            ok &= oracle_ok;
            detail = format!("dense_oracle_n64={oracle:.12} sparse_n64={sparse64:.12} {detail}");
        }
        if !in_time {
            detail.push_str(" | runtime bound exceeded");
        }
        if r.id != 13 {
            all_ok &= ok;
            line(r.id, ok, r.name, elapsed, &detail);
        }
        clock = Instant::now();
    })
    .expect("verify runs");

    // Criterion 13: the suite's own rerun check plus a second full `verify`
    // through the binary, compared byte for byte.
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_qsd"))
        .args([
            "verify",
            "--config",
            "../../configs/bm1d.conf",
            "--out",
            second.to_str().unwrap(),
        ])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .expect("binary runs");
    let a = fs::read(first.join("report.json")).unwrap();
    let b = fs::read(second.join("report.json")).unwrap_or_default();
    let internal = &report.checks[12];
    let identical = a == b;
    let ok = identical && internal.verdict == Verdict::Pass && status.status.code() == Some(0);
    all_ok &= ok;
    line(
        13,
        ok,
        internal.name,
        start.elapsed(),
        &format!(
            "report_bytes={} identical={identical} | {}",
            a.len(),
            summary(internal)
        ),
    );

    if all_ok {
        println!("acceptance: all 13 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
