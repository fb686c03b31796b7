//! `verify` subcommand: oracle sweep, tangential-cone survey and adjoint check.

use std::io::Write;
use std::str::FromStr;

use anyhow::{bail, Result};
use bouligand_landweber::verification::{
    adjoint_check, oracle_sweep, tcc_survey, AdjointReport, OracleReport, TccSurvey,
    ORACLE_TOLERANCE,
};
use bouligand_landweber::{ExactData, ExactFields, ForwardProblem};
use log::info;
use serde::Serialize;

use crate::config::{pick, required, FileConfig};
use crate::{create, write_json, VerifyArgs};

pub const VERIFY_HEADER: &str = "suite,n_h,item,quantity,value";
const ADJOINT_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Suite {
    Oracle,
    Tcc,
    Adjoint,
    All,
}

impl FromStr for Suite {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "oracle" => Suite::Oracle,
            "tcc" => Suite::Tcc,
            "adjoint" => Suite::Adjoint,
            "all" => Suite::All,
            _ => bail!("unknown suite `{s}` (expected oracle, tcc, adjoint or all)"),
        })
    }
}

impl Suite {
    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

#[derive(Serialize, Default)]
struct VerifyReport {
    oracle: Vec<OracleReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tcc: Option<TccSurvey>,
    /// How the survey pairs were drawn.
    #[serde(skip_serializing_if = "Option::is_none")]
    tcc_sampling: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    adjoint: Option<AdjointReport>,
    passed: bool,
}

struct Rows(Vec<String>);

impl Rows {
    fn push(
        &mut self,
        suite: &str,
        n: usize,
        item: impl std::fmt::Display,
        quantity: &str,
        value: f64,
    ) {
        self.0
            .push(format!("{suite},{n},{item},{quantity},{value:.16e}"));
    }
}

pub fn run(args: VerifyArgs, file: &FileConfig) -> anyhow::Result<()> {
    let suite = Suite::from_str(&required(args.suite, file.suite.clone(), "suite")?)?;
    let out = required(args.out, file.out.clone(), "out")?;
    let n = pick(args.n, file.n).unwrap_or(64);
    let seed = pick(args.seed, file.seed).unwrap_or(2024);
    let trials = pick(args.trials, file.trials);
    let pairs = pick(args.pairs, file.pairs).unwrap_or(200);
    let radius = pick(args.radius, file.radius).unwrap_or(0.5);

    let mut report = VerifyReport {
        passed: true,
        ..Default::default()
    };
    let mut rows = Rows(Vec::new());

    if suite.includes(Suite::Oracle) {
        for n_h in [3, 4, 5] {
            let r = oracle_sweep(n_h, trials.unwrap_or(100), seed + n_h as u64)?;
            info!(
                "oracle n_h={n_h}: max difference {:.3e}, {} failures",
                r.max_diff, r.failures
            );
            for (k, d) in r.diffs.iter().enumerate() {
                rows.push("oracle", n_h, k, "max_abs_diff", *d);
            }
            report.passed &= r.failures == 0;
            report.oracle.push(r);
        }
    }

    if suite.includes(Suite::Tcc) {
        let p = ForwardProblem::positive_part(n)?;
        let fields: ExactFields = ExactData::default().fields(&p.mesh())?;
        let s = tcc_survey(&p, &fields.source, radius, pairs, seed)?;
        info!(
            "tcc n_h={n}: max ratio {:.3e} over {} pairs ({} degenerate)",
            s.max_ratio,
            s.samples.len(),
            s.degenerate
        );
        for (k, sample) in s.samples.iter().enumerate() {
            let item = format!("{k}:{}", sample.perturbation);
            rows.push("tcc", n, &item, "ratio", sample.estimate.ratio);
            rows.push("tcc", n, &item, "mismatch", sample.estimate.mismatch);
            rows.push("tcc", n, &item, "radius", sample.estimate.radius);
        }
        for (exponent, c) in &s.mismatch_fits {
            rows.push("tcc", n, format!("fit_p{exponent}"), "constant", *c);
        }
        rows.push("tcc", n, "all", "max_ratio", s.max_ratio);
        report.tcc_sampling = Some(format!(
            "u = c + a, u' = c + b around the interpolated exact source c; a and b have M-norm {radius}*s, \
             s ~ U(0,1]; pairs alternate between i.i.d. U(-1,1) nodal directions and \
             sum_(k,l<=4) z_kl sin(k pi x1) sin(l pi x2)/(k^2+l^2) with z_kl ~ N(0,1); ChaCha8 seed {seed}"
        ));
        report.tcc = Some(s);
    }

    if suite.includes(Suite::Adjoint) {
        let p = ForwardProblem::positive_part(n)?;
        let r = adjoint_check(&p, trials.unwrap_or(50), seed)?;
        info!(
            "adjoint n_h={n}: max asymmetry {:.3e}, largest Rayleigh quotient {:.5}",
            r.max_asymmetry, r.max_rayleigh
        );
        for (k, a) in r.asymmetry.iter().enumerate() {
            rows.push("adjoint", n, k, "asymmetry", *a);
        }
        rows.push("adjoint", n, "all", "max_rayleigh", r.max_rayleigh);
        report.passed &= r.max_asymmetry <= ADJOINT_TOLERANCE;
        report.adjoint = Some(r);
    }

    let mut w = create(&out)?;
    writeln!(w, "{VERIFY_HEADER}")?;
    for line in &rows.0 {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    write_json(&bouligand_landweber::record::sidecar_path(&out), &report)?;
    if !report.passed {
        bail!(
            "verification failed (oracle tolerance {ORACLE_TOLERANCE:e}, adjoint tolerance {ADJOINT_TOLERANCE:e}); see {}",
            out.display()
        );
    }
    println!("verification passed; report in {}", out.display());
    Ok(())
}
