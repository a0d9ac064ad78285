use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::json;

use jive_infer::dataio::{load_dataset, ColumnRoles};
use jive_infer::kernels::build_kernel;
use jive_infer::simulation::experiment::ArPoint;
use jive_infer::simulation::table::{render, to_csv};
use jive_infer::simulation::{
    default_grid, run_power_curve, run_size_experiment, table_preset, Dgp1Spec, Dgp2Spec, DgpSpec, ExperimentConfig,
    RejectionTable,
};
use jive_infer::{Error, Method};

use crate::args::{Common, Format, PowerArgs, RunArgs, SimulateArgs, TablePreset, ValidateArgs};
use crate::output::emit;

const DEFAULT_SEED: u64 = 20240601;

fn workers(run: &RunArgs) -> usize {
    run.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

/// A spec file holds one experiment or a list of them.
fn load_specs(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    let specs = if value.is_array() {
        serde_json::from_value(value).map_err(Error::from)?
    } else {
        vec![serde_json::from_value(value).map_err(Error::from)?]
    };
    Ok(specs)
}

fn apply_overrides(cfg: &mut ExperimentConfig, run: &RunArgs, common: &Common) {
    if let Some(reps) = run.reps {
        cfg.reps = reps;
    }
    if let Some(nominal) = run.nominal {
        cfg.nominal = nominal;
    }
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if let Some(modes) = &run.variance {
        cfg.variance_modes = modes.clone();
    }
    if run.ar_at_truth {
        cfg.ar_point = ArPoint::Truth;
    }
    if let Some(methods) = &common.methods {
        cfg.methods = methods.clone();
    }
    if let Some(families) = &common.families {
        cfg.families = families.clone();
    }
    if let Some(reference) = common.reference {
        let wanted = Some(reference.into());
        cfg.families.retain(|f| f.natural_reference() == wanted);
    }
    cfg.one_sided_ar |= common.one_sided_ar;
}

fn tables_text(tables: &[RejectionTable], methods: &[Method], format: Format) -> Result<String> {
    Ok(match format {
        Format::Table => render(tables, methods),
        Format::Csv => to_csv(tables)?,
        Format::Json => serde_json::to_string_pretty(tables)? + "\n",
    })
}

fn methods_of(configs: &[ExperimentConfig]) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|m| configs.iter().any(|c| c.methods.contains(m)))
        .collect()
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut configs = match (&args.table, &args.spec) {
        (Some(preset), _) => table_preset(preset.name(), 5000, DEFAULT_SEED)?,
        (None, Some(path)) => load_specs(path)?,
        (None, None) => return Err(Error::Usage("give --table or --spec".into()).into()),
    };
    for cfg in &mut configs {
        apply_overrides(cfg, &args.run, &args.common);
        cfg.validate()?;
    }
    let workers = workers(&args.run);
    let tables = configs
        .iter()
        .map(|cfg| run_size_experiment(cfg, workers))
        .collect::<jive_infer::Result<Vec<_>>>()?;
    for t in &tables {
        for w in &t.warnings {
            eprintln!("warning: {w}");
        }
    }
    let methods = methods_of(&configs);
    emit(args.common.out.as_deref(), &tables_text(&tables, &methods, args.common.format)?)?;
    if args.common.out.is_some() && args.common.format != Format::Table {
        print!("{}", render(&tables, &methods));
    }
    Ok(())
}

/// Whitespace-separated `(null value, rate, mc_se)` series, one gnuplot index block per cell.
fn gnuplot(tables: &[RejectionTable]) -> String {
    let mut s = String::new();
    let Some(first) = tables.first() else {
        return s;
    };
    for (i, row) in first.rows.iter().enumerate() {
        let _ = writeln!(s, "# {} {} {}", row.method, row.family, row.variance_mode);
        for t in tables {
            let r = &t.rows[i];
            let _ = writeln!(s, "{} {} {}", t.label.null_value, r.rate, r.mc_se);
        }
        s.push_str("\n\n");
    }
    s
}

fn power_table(tables: &[RejectionTable]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>10} {:<7}{:<8}{:<10}{:>7}{:>8}", "null", "method", "family", "variance", "rate", "mc_se");
    for t in tables {
        for r in &t.rows {
            let _ = writeln!(
                s,
                "{:>10.4} {:<7}{:<8}{:<10}{:>7.3}{:>8.4}",
                t.label.null_value,
                r.method.name(),
                r.family.name(),
                r.variance_mode.to_string(),
                r.rate,
                r.mc_se
            );
        }
    }
    s
}

pub fn power(args: &PowerArgs) -> Result<()> {
    let mut cfg = match (&args.spec, args.dgp) {
        (Some(path), _) => {
            let mut specs = load_specs(path)?;
            if specs.len() != 1 {
                return Err(Error::Usage("a power run takes exactly one experiment spec".into()).into());
            }
            specs.remove(0)
        }
        (None, dgp) => ExperimentConfig {
            dgp: match dgp.unwrap_or(TablePreset::Dgp1) {
                TablePreset::Dgp1 => DgpSpec::Dgp1(Dgp1Spec::default()),
                TablePreset::Dgp2 => DgpSpec::Dgp2(Dgp2Spec::default()),
            },
            reps: 1000,
            seed: DEFAULT_SEED,
            ..ExperimentConfig::default()
        },
    };
    apply_overrides(&mut cfg, &args.run, &args.common);
    cfg.validate()?;
    let grid = match &args.grid {
        Some(g) => g.clone(),
        None => default_grid(&cfg.dgp, 0.5, 21)?,
    };
    let tables = run_power_curve(&cfg, &grid, workers(&args.run))?;
    if let Some(path) = &args.emit_gnuplot {
        std::fs::write(path, gnuplot(&tables)).with_context(|| format!("writing {}", path.display()))?;
    }
    let text = match args.common.format {
        Format::Table => power_table(&tables),
        other => tables_text(&tables, &cfg.methods, other)?,
    };
    emit(args.common.out.as_deref(), &text)?;
    Ok(())
}

pub fn validate(args: &ValidateArgs) -> Result<()> {
    let report = match (&args.data, &args.schema, &args.spec) {
        (Some(data), Some(schema), _) => {
            let roles = ColumnRoles::parse(schema)?;
            let ds = load_dataset(data, &roles)?;
            let kernel = build_kernel(ds.z(), Method::Hlim)?;
            let leverage = jive_infer::dataio::validate_assumption1(&kernel.p_diag, args.leverage_threshold);
            json!({
                "n": ds.n(),
                "k": ds.k(),
                "g": ds.g(),
                "warnings": ds.warnings(),
                "leverage": leverage,
            })
        }
        (_, _, Some(spec)) => {
            let specs = load_specs(spec)?;
            for cfg in &specs {
                cfg.validate()?;
            }
            json!({
                "experiments": specs.len(),
                "cells": specs.iter().map(|c| c.cells().len()).sum::<usize>(),
            })
        }
        _ => return Err(Error::Usage("give --data with --schema, or --spec".into()).into()),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
