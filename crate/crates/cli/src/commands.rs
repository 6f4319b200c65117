//! Subcommand implementations.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use nalgebra::DMatrix;

use cocluster_core::decouple::{
    cluster_samples, extract_subcommunities, select_lambda, site_consistency, DecoupleInputs,
};
use cocluster_core::diagnostics::ess;
use cocluster_core::eval::{
    crossvalidate, posterior_predictive_check, predict_with_indicators, waic, Band, EvalReport,
};
use cocluster_core::indicators::{candidate_mask, mb_indval_posterior, rank_indicators, CandidateFilter};
use cocluster_core::map_init::map_fit;
use cocluster_core::simulate::SimConfig;
use cocluster_core::summaries::write_trace;
use cocluster_core::{
    load_attributes, load_counts, load_covariates, load_sites, run_chain, CovariateTable, PosteriorSummaries,
    SparseCounts, SpeciesAttributes,
};

use crate::config::RunConfig;
use crate::io::{self, factor_names, require, write_keyed};
use crate::rundir::RunDir;
use crate::{svg, UsageError};

const SAMPLE_IDS: &str = "sample_ids.txt";
const SPECIES_IDS: &str = "species_ids.txt";
const COVARIATE_NAMES: &str = "covariate_names.txt";

fn load_inputs(cfg: &RunConfig, counts: &Path, covariates: Option<&Path>) -> Result<(SparseCounts, CovariateTable)> {
    let raw = load_counts(counts)?;
    let c = if cfg.min_prevalence > 1 {
        let f = raw.filter_min_prevalence(cfg.min_prevalence)?;
        info!("{} of {} species kept at prevalence >= {}", f.p(), raw.p(), cfg.min_prevalence);
        f
    } else {
        raw
    };
    let x = match covariates {
        Some(p) => load_covariates(p, c.sample_ids())?,
        None => CovariateTable::empty(c.n()),
    };
    Ok((c, x))
}

fn write_kv(path: &Path, rows: &[(&str, String)]) -> Result<()> {
    let mut w = io::writer(path)?;
    w.write_record(["key", "value"])?;
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_svg(path: &Path, content: String) -> Result<()> {
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

/// Fit the chain from a MAP start and write summaries with ids alongside.
fn fit_full(cfg: &RunConfig, counts: &SparseCounts, x: &CovariateTable, dir: &Path) -> Result<PosteriorSummaries> {
    let h = cfg.hyper();
    let map = map_fit(counts, x, &cfg.map(), &h)?;
    info!("MAP log posterior {:.3} (replicate {})", map.log_posterior, map.best_replicate);
    let s = run_chain(counts, x, &cfg.chain(), &h, map.state)?;
    save_summaries(&s, counts, x, dir)?;
    Ok(s)
}

fn save_summaries(s: &PosteriorSummaries, counts: &SparseCounts, x: &CovariateTable, dir: &Path) -> Result<()> {
    s.save(dir)?;
    io::write_ids(&dir.join(SAMPLE_IDS), counts.sample_ids())?;
    io::write_ids(&dir.join(SPECIES_IDS), counts.species_ids())?;
    io::write_ids(&dir.join(COVARIATE_NAMES), &x.names)?;
    Ok(())
}

fn load_summaries(dir: &Path) -> Result<(PosteriorSummaries, Vec<String>, Vec<String>)> {
    require(dir)?;
    require(&dir.join("meta.csv"))?;
    let s = PosteriorSummaries::load(dir)?;
    let samples = io::ids_or_index(dir, SAMPLE_IDS, s.n)?;
    let species = io::ids_or_index(dir, SPECIES_IDS, s.p)?;
    Ok((s, samples, species))
}

fn summary_inputs(dir: &Path) -> Vec<(&'static str, std::path::PathBuf)> {
    ["meta.csv", "draws_gamma.csv", "draws_eta.csv", "draws_beta.csv", "omega_gram.csv", "b.csv", "w.csv"]
        .into_iter()
        .map(|f| ("summaries", dir.join(f)))
        .collect()
}

fn as_refs<'a>(v: &'a [(&'static str, std::path::PathBuf)]) -> Vec<(&'static str, &'a Path)> {
    v.iter().map(|(n, p)| (*n, p.as_path())).collect()
}

fn beta_mean(s: &PosteriorSummaries) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(s.d, s.k);
    for d in &s.draws {
        m += &d.beta;
    }
    m / s.draws.len().max(1) as f64
}

pub fn fit(cfg: &RunConfig, counts_path: &Path, cov: Option<&Path>, out: &Path, map_only: bool) -> Result<()> {
    require(counts_path)?;
    let mut inputs = vec![("counts", counts_path)];
    if let Some(c) = cov {
        require(c)?;
        inputs.push(("covariates", c));
    }
    let run = RunDir::create(out, "fit", &cfg.render(), &inputs)?;
    let (counts, x) = load_inputs(cfg, counts_path, cov)?;
    let rep = counts.sparsity_report();
    write_kv(
        &run.file("sparsity.csv"),
        &[
            ("samples", rep.n.to_string()),
            ("species", rep.p.to_string()),
            ("nonzeros", rep.nnz.to_string()),
            ("sparsity", rep.sparsity.to_string()),
            ("max_count", rep.max_count.to_string()),
            ("total", rep.total.to_string()),
            ("mean_prevalence", rep.mean_prevalence.to_string()),
        ],
    )?;
    io::write_ids(&run.file(SAMPLE_IDS), counts.sample_ids())?;
    io::write_ids(&run.file(SPECIES_IDS), counts.species_ids())?;
    let h = cfg.hyper();
    let k = cfg.k;

    let map = map_fit(&counts, &x, &cfg.map(), &h)?;
    let map_dir = run.file("map");
    fs::create_dir_all(&map_dir)?;
    write_keyed(&map_dir.join("omega.csv"), "sample_id", counts.sample_ids(), &factor_names(k), &map.state.omega)?;
    write_keyed(&map_dir.join("gamma.csv"), "species_id", counts.species_ids(), &factor_names(k), &map.state.gamma)?;
    write_trace(&map_dir.join("trace.csv"), &map.trace)?;
    let mut w = io::writer(&map_dir.join("replicates.csv"))?;
    w.write_record(["replicate", "log_posterior", "best"])?;
    for (r, lp) in map.replicate_log_posteriors.iter().enumerate() {
        let lp = lp.map(|v| v.to_string()).unwrap_or_else(|| "failed".into());
        w.write_record([r.to_string(), lp, (r == map.best_replicate).to_string()])?;
    }
    w.flush()?;
    info!("MAP log posterior {:.3}", map.log_posterior);

    if !map_only {
        let s = run_chain(&counts, &x, &cfg.chain(), &h, map.state)?;
        save_summaries(&s, &counts, &x, &run.file("summaries"))?;
        write_posterior_means(&run, &s, &counts, &x)?;
        let kept = &s.trace[cfg.burn_in.min(s.trace.len())..];
        let mut diag = vec![("draws", s.draws.len().to_string())];
        match ess(kept) {
            Ok(e) => {
                diag.push(("log_posterior_ess", e.ess.to_string()));
                diag.push(("zero_variance", e.zero_variance.to_string()));
            }
            Err(e) => warn!("ESS not computed: {e}"),
        }
        write_kv(&run.file("diagnostics.csv"), &diag)?;
        write_svg(&run.file("trace.svg"), svg::trace(&s.trace, "Log posterior", "log posterior"))?;
    }
    run.finish()
}

fn write_posterior_means(run: &RunDir, s: &PosteriorSummaries, counts: &SparseCounts, x: &CovariateTable) -> Result<()> {
    let f = factor_names(s.k);
    write_keyed(&run.file("omega_mean.csv"), "sample_id", counts.sample_ids(), &f, &s.omega_mean)?;
    write_keyed(&run.file("gamma_mean.csv"), "species_id", counts.species_ids(), &f, &s.gamma_mean)?;
    write_keyed(&run.file("beta_mean.csv"), "covariate", &x.names, &f, &beta_mean(s))?;
    Ok(())
}

pub fn decouple(cfg: &RunConfig, summaries: &Path, out: &Path, grid_spec: &str, sites: Option<&Path>) -> Result<()> {
    let (s, sample_ids, species_ids) = load_summaries(summaries)?;
    let mut inputs = summary_inputs(summaries);
    if let Some(p) = sites {
        require(p)?;
        inputs.push(("sites", p.to_path_buf()));
    }
    let run = RunDir::create(out, "decouple", &format!("lambda_grid = {grid_spec}\n{}", cfg.render()), &as_refs(&inputs))?;
    let di = DecoupleInputs::from_summaries(&s)?;
    let grid: Vec<f64> = if grid_spec.trim() == "auto" {
        di.feasible_grid(cfg.grid_points)
    } else {
        grid_spec
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| UsageError(format!("--lambda-grid: expected 'auto' or numbers, got '{grid_spec}'")))?
    };
    let (fit, path) = select_lambda(&di, &grid, &cfg.descent())?;
    info!("selected lambda {:.6e} after {} sweeps", fit.lambda, fit.sweeps);
    let f = factor_names(s.k);
    write_keyed(&run.file("g_hat.csv"), "species_id", &species_ids, &f, &fit.g)?;

    let mut w = io::writer(&run.file("lambda_path.csv"))?;
    w.write_record(["lambda", "objective", "nonzeros", "empty_rows", "selected"])?;
    for pt in &path {
        w.write_record([
            pt.lambda.to_string(),
            pt.objective.to_string(),
            pt.nonzeros.to_string(),
            pt.empty_rows.to_string(),
            (pt.lambda == fit.lambda).to_string(),
        ])?;
    }
    w.flush()?;

    let support = fit.support();
    let pattern = |p: &[usize]| p.iter().map(|l| (l + 1).to_string()).collect::<Vec<_>>().join("+");
    let subs = extract_subcommunities(&support);
    let mut ws = io::writer(&run.file("subcommunities.csv"))?;
    ws.write_record(["subcommunity", "pattern", "size", "species", "cosmopolitan"])?;
    let mut wm = io::writer(&run.file("support.csv"))?;
    wm.write_record(["species_id", "support_size", "pattern", "subcommunity"])?;
    let mut member = vec![(0usize, String::new()); s.p];
    for (c, sc) in subs.iter().enumerate() {
        ws.write_record([
            (c + 1).to_string(),
            pattern(&sc.pattern),
            sc.pattern.len().to_string(),
            sc.species.len().to_string(),
            sc.cosmopolitan.to_string(),
        ])?;
        for &j in &sc.species {
            member[j] = (c + 1, pattern(&sc.pattern));
        }
    }
    for (j, (c, pat)) in member.iter().enumerate() {
        let size = support[j].iter().filter(|&&b| b).count();
        wm.write_record([species_ids[j].clone(), size.to_string(), pat.clone(), c.to_string()])?;
    }
    ws.flush()?;
    wm.flush()?;

    let labels = cluster_samples(&s.omega_mean);
    let mut wc = io::writer(&run.file("clusters.csv"))?;
    wc.write_record(["sample_id", "cluster"])?;
    for (id, l) in sample_ids.iter().zip(&labels) {
        wc.write_record([id.clone(), (l + 1).to_string()])?;
    }
    wc.flush()?;
    if let Some(p) = sites {
        let site_of = load_sites(p, &sample_ids)?;
        let mut w = io::writer(&run.file("site_consistency.csv"))?;
        w.write_record(["site_id", "samples", "majority_cluster", "agreement"])?;
        for c in site_consistency(&labels, &site_of, s.k) {
            w.write_record([c.site, c.samples.to_string(), (c.majority + 1).to_string(), c.agreement.to_string()])?;
        }
        w.flush()?;
    }
    run.finish()
}

fn opt_str(v: &Option<String>) -> String {
    v.clone().unwrap_or_default()
}

pub fn indicators(cfg: &RunConfig, summaries: &Path, attributes: &Path, out: &Path, filter: &str, top: usize) -> Result<()> {
    let filter = CandidateFilter::parse(filter).map_err(|e| UsageError(e.to_string()))?;
    let (s, _, species_ids) = load_summaries(summaries)?;
    require(attributes)?;
    let mut inputs = summary_inputs(summaries);
    inputs.push(("attributes", attributes.to_path_buf()));
    let conf = format!("filter = {filter}\ntop = {top}\n{}", cfg.render());
    let run = RunDir::create(out, "indicators", &conf, &as_refs(&inputs))?;
    let attrs = load_attributes(attributes, &species_ids)?;
    let scores = mb_indval_posterior(&s, cfg.exec())?;
    write_keyed(&run.file("indval_scores.csv"), "species_id", &species_ids, &factor_names(s.k), &scores.score)?;
    let mask = candidate_mask(filter, &attrs, &cfg.filter())?;
    let table = rank_indicators(&scores, &mask, filter, top)?;
    let mut w = io::writer(&run.file(&format!("indicators_{filter}.csv")))?;
    w.write_record([
        "factor", "rank", "global_rank", "species_id", "name", "class", "order", "family", "body_size", "a", "b",
        "score", "expected_loss",
    ])?;
    for r in &table.rows {
        let rec = &attrs.records[r.species];
        w.write_record([
            (r.factor + 1).to_string(),
            r.rank.to_string(),
            r.global_rank.to_string(),
            species_ids[r.species].clone(),
            opt_str(&rec.name),
            opt_str(&rec.class),
            opt_str(&rec.order),
            opt_str(&rec.family),
            rec.body_size.map(|v| v.to_string()).unwrap_or_default(),
            r.a.to_string(),
            r.b.to_string(),
            r.score.to_string(),
            r.expected_loss.to_string(),
        ])?;
    }
    w.flush()?;
    run.finish()
}

pub fn predict(
    cfg: &RunConfig,
    summaries: &Path,
    covariates: &Path,
    indicators: Option<&Path>,
    indicator_counts: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let (s, _, species_ids) = load_summaries(summaries)?;
    require(covariates)?;
    let mut inputs = summary_inputs(summaries);
    inputs.push(("covariates", covariates.to_path_buf()));
    match (indicators, indicator_counts) {
        (Some(a), Some(b)) => {
            require(a)?;
            require(b)?;
            inputs.push(("indicators", a.to_path_buf()));
            inputs.push(("indicator_counts", b.to_path_buf()));
        }
        (None, None) => {}
        _ => return Err(UsageError("--indicators and --indicator-counts go together".into()).into()),
    }
    let run = RunDir::create(out, "predict", &cfg.render(), &as_refs(&inputs))?;

    let (header, rows) = io::read_table(covariates)?;
    anyhow::ensure!(header.first().map(String::as_str) == Some("sample_id"), "{}: first column must be 'sample_id'", covariates.display());
    let new_ids: Vec<String> = rows.iter().map(|r| r[0].clone()).collect();
    let x = load_covariates(covariates, &new_ids)?;
    let names_path = summaries.join(COVARIATE_NAMES);
    if names_path.exists() {
        let trained = io::read_ids(&names_path)?;
        if trained != x.names {
            bail!("covariates {:?} differ from the fitted {:?}", x.names, trained);
        }
    }

    let mut j_idx = Vec::new();
    let mut observed = DMatrix::zeros(new_ids.len(), 0);
    if let (Some(ind), Some(cnt)) = (indicators, indicator_counts) {
        let (h, rows) = io::read_table(ind)?;
        let col = io::column(&h, "species_id", ind)?;
        for r in rows {
            let id = &r[col];
            let j = species_ids
                .iter()
                .position(|s| s == id)
                .with_context(|| format!("indicator '{id}' is not a fitted species"))?;
            if !j_idx.contains(&j) {
                j_idx.push(j);
            }
        }
        let y = load_counts(cnt)?;
        observed = DMatrix::zeros(new_ids.len(), j_idx.len());
        for e in y.entries() {
            let (sid, spid) = (&y.sample_ids()[e.row], &y.species_ids()[e.col]);
            let Some(i) = new_ids.iter().position(|v| v == sid) else {
                warn!("counts for unknown sample '{sid}' ignored");
                continue;
            };
            if let Some(c) = j_idx.iter().position(|&j| &species_ids[j] == spid) {
                observed[(i, c)] = e.count;
            }
        }
    }
    let pred = predict_with_indicators(&x.x, &observed, &j_idx, &s, &cfg.predict())?;
    let mut w = io::writer(&run.file("predictions.csv"))?;
    w.write_record(["sample_id", "species_id", "probability"])?;
    for (i, sid) in new_ids.iter().enumerate() {
        for (j, spid) in species_ids.iter().enumerate() {
            let v = pred[(i, j)];
            if !v.is_nan() {
                w.write_record([sid.as_str(), spid.as_str(), &v.to_string()])?;
            }
        }
    }
    w.flush()?;
    run.finish()
}

pub struct EvalInputs<'a> {
    pub counts: &'a Path,
    pub covariates: Option<&'a Path>,
    pub sites: Option<&'a Path>,
    pub attributes: Option<&'a Path>,
    pub summaries: Option<&'a Path>,
}

fn write_bands(path: &Path, ids: &[String], key: &str, bands: &[Band]) -> Result<()> {
    let mut w = io::writer(path)?;
    w.write_record([key, "observed", "lo", "median", "hi", "covered"])?;
    for (id, b) in ids.iter().zip(bands) {
        w.write_record([
            id.clone(),
            b.observed.to_string(),
            b.lo.to_string(),
            b.median.to_string(),
            b.hi.to_string(),
            b.covers().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_cv(run: &RunDir, r: &EvalReport, counts: &SparseCounts) -> Result<()> {
    let mut w = io::writer(&run.file("folds.csv"))?;
    w.write_record(["sample_id", "fold"])?;
    for (id, f) in counts.sample_ids().iter().zip(&r.folds) {
        w.write_record([id.clone(), (f + 1).to_string()])?;
    }
    w.flush()?;

    let mut w = io::writer(&run.file("auc_species.csv"))?;
    let mut header = vec!["species_id".to_string(), "stratum".to_string()];
    header.extend(r.modes.iter().map(|m| format!("auc_{m}")));
    w.write_record(&header)?;
    for sp in &r.species {
        let mut rec = vec![counts.species_ids()[sp.species].clone(), sp.stratum.to_string()];
        rec.extend(sp.auc.iter().map(|a| a.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = io::writer(&run.file("auc_strata.csv"))?;
    let mut header = vec!["stratum".to_string(), "species".to_string()];
    for m in &r.modes {
        header.push(format!("mean_auc_{m}"));
        header.push(format!("n_{m}"));
    }
    w.write_record(&header)?;
    for st in &r.strata {
        let mut rec = vec![st.stratum.to_string(), st.species.to_string()];
        for (a, c) in st.mean_auc.iter().zip(&st.counted) {
            rec.push(a.map(|v| v.to_string()).unwrap_or_default());
            rec.push(c.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = io::writer(&run.file("fold_indicators.csv"))?;
    w.write_record(["fold", "strategy", "species_id"])?;
    for (f, per) in r.indicators.iter().enumerate() {
        for (m, js) in per.iter().enumerate() {
            for &j in js {
                w.write_record([(f + 1).to_string(), r.modes[m + 1].clone(), counts.species_ids()[j].clone()])?;
            }
        }
    }
    w.flush()?;

    let groups: Vec<(String, Vec<Option<f64>>)> = r
        .strata
        .iter()
        .map(|s| (format!("|g|0 = {}", s.stratum), s.mean_auc.clone()))
        .collect();
    write_svg(&run.file("auc_strata.svg"), svg::grouped_bars(&groups, &r.modes, "Held-out AUC by loading support size", "mean AUC", 0.5))
}

pub fn evaluate(cfg: &RunConfig, inp: EvalInputs<'_>, out: &Path, cv: bool) -> Result<()> {
    require(inp.counts)?;
    let mut inputs: Vec<(&'static str, std::path::PathBuf)> = vec![("counts", inp.counts.to_path_buf())];
    for (name, p) in [("covariates", inp.covariates), ("sites", inp.sites), ("attributes", inp.attributes)] {
        if let Some(p) = p {
            require(p)?;
            inputs.push((name, p.to_path_buf()));
        }
    }
    if let Some(d) = inp.summaries {
        require(d)?;
        inputs.extend(summary_inputs(d));
    }
    let run = RunDir::create(out, "evaluate", &cfg.render(), &as_refs(&inputs))?;
    let (counts, x) = load_inputs(cfg, inp.counts, inp.covariates)?;
    let sites = inp.sites.map(|p| load_sites(p, counts.sample_ids())).transpose()?;
    let attrs = match inp.attributes {
        Some(p) => load_attributes(p, counts.species_ids())?,
        None => SpeciesAttributes::empty(counts.p()),
    };

    if cv {
        let report = crossvalidate(&counts, &x, sites.as_deref(), &attrs, &cfg.cv())?;
        for (m, name) in report.modes.iter().enumerate() {
            info!("mean held-out AUC ({name}): {:?}", report.mean_auc(m));
        }
        write_cv(&run, &report, &counts)?;
    }

    let s = match inp.summaries {
        Some(d) => {
            let (s, _, species) = load_summaries(d)?;
            if species != counts.species_ids() || s.n != counts.n() {
                bail!("{}: summaries were fitted to a different count matrix", d.display());
            }
            s
        }
        None => fit_full(cfg, &counts, &x, &run.file("summaries"))?,
    };
    let wa = waic(&counts, &s, cfg.exec())?;
    write_kv(
        &run.file("waic.csv"),
        &[
            ("waic", wa.waic.to_string()),
            ("lppd", wa.lppd.to_string()),
            ("p_waic", wa.p_waic.to_string()),
            ("draws", wa.draws.to_string()),
        ],
    )?;
    let ppc = posterior_predictive_check(&counts, &s, cfg.seed, cfg.exec())?;
    write_bands(&run.file("ppc_rows.csv"), counts.sample_ids(), "sample_id", &ppc.rows)?;
    write_bands(&run.file("ppc_cols.csv"), counts.species_ids(), "species_id", &ppc.cols)?;
    let mut w = io::writer(&run.file("ppc_coverage.csv"))?;
    w.write_record(["margin", "scale", "coverage"])?;
    for (m, sc, v) in [
        ("rows", "raw", ppc.row_coverage),
        ("rows", "log1p", ppc.row_coverage_log),
        ("cols", "raw", ppc.col_coverage),
        ("cols", "log1p", ppc.col_coverage_log),
    ] {
        w.write_record([m, sc, &v.to_string()])?;
    }
    w.flush()?;
    let pts = |b: &[Band]| b.iter().map(|b| (b.observed, b.lo, b.median, b.hi)).collect::<Vec<_>>();
    write_svg(&run.file("ppc_rows.svg"), svg::band_scatter(&pts(&ppc.rows), "Sample totals: replicated vs observed", true))?;
    write_svg(&run.file("ppc_cols.svg"), svg::band_scatter(&pts(&ppc.cols), "Species totals: replicated vs observed", true))?;
    write_svg(&run.file("trace.svg"), svg::trace(&s.trace, "Log posterior", "log posterior"))?;
    run.finish()
}

/// Rows of a CSV as `(id, values)` with the header after the id column.
fn read_keyed_numeric(path: &Path) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>)> {
    let (header, rows) = io::read_table(path)?;
    let mut ids = Vec::with_capacity(rows.len());
    let mut vals = Vec::with_capacity(rows.len());
    for r in rows {
        ids.push(r[0].clone());
        vals.push(r[1..].iter().map(|v| v.parse().unwrap_or(f64::NAN)).collect());
    }
    Ok((ids, header[1..].to_vec(), vals))
}

pub fn report(run_dir: &Path, out: &Path) -> Result<()> {
    require(run_dir)?;
    let candidates = [
        "g_hat.csv",
        "support.csv",
        "clusters.csv",
        "site_consistency.csv",
        "beta_mean.csv",
        "auc_strata.csv",
        "trace.csv",
        "summaries/trace.csv",
        "map/trace.csv",
        "ppc_rows.csv",
        "ppc_cols.csv",
    ];
    let mut inputs: Vec<(&'static str, std::path::PathBuf)> = candidates
        .iter()
        .map(|c| run_dir.join(c))
        .filter(|p| p.exists())
        .map(|p| ("table", p))
        .collect();
    if let Ok(rd) = fs::read_dir(run_dir) {
        let mut extra: Vec<_> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("indicators_") && n.ends_with(".csv")))
            .collect();
        extra.sort();
        inputs.extend(extra.into_iter().map(|p| ("table", p)));
    }
    if inputs.is_empty() {
        return Err(UsageError(format!("{}: nothing to report", run_dir.display())).into());
    }
    let run = RunDir::create(out, "report", "", &as_refs(&inputs))?;
    let mut made = Vec::new();

    let g_path = run_dir.join("g_hat.csv");
    if g_path.exists() {
        let (ids, cols, mut g) = read_keyed_numeric(&g_path)?;
        // order species by support pattern, then by dominant loading
        let mut order: Vec<usize> = (0..ids.len()).collect();
        let key = |v: &Vec<f64>| -> Vec<bool> { v.iter().map(|x| *x <= 0.0).collect() };
        order.sort_by(|&a, &b| key(&g[a]).cmp(&key(&g[b])).then(a.cmp(&b)));
        g = order.iter().map(|&j| g[j].clone()).collect();
        let labels: Vec<String> = order.iter().map(|&j| ids[j].clone()).collect();
        write_svg(&run.file("loadings.svg"), svg::heatmap(&g, &labels, &cols, "Sparse species loadings", false))?;
        made.push("loadings.svg");
    }
    let c_path = run_dir.join("clusters.csv");
    if c_path.exists() {
        let (_, rows) = io::read_table(&c_path)?;
        let mut sizes: std::collections::BTreeMap<usize, usize> = Default::default();
        for r in &rows {
            *sizes.entry(r[1].parse().unwrap_or(0)).or_default() += 1;
        }
        let body: Vec<Vec<String>> = sizes.iter().map(|(c, n)| vec![c.to_string(), n.to_string()]).collect();
        write_svg(&run.file("clusters.svg"), svg::table(&["cluster".into(), "samples".into()], &body, "Samples per dominant factor"))?;
        made.push("clusters.svg");
    }
    let s_path = run_dir.join("site_consistency.csv");
    if s_path.exists() {
        let (h, rows) = io::read_table(&s_path)?;
        write_svg(&run.file("site_consistency.svg"), svg::table(&h, &rows, "Cluster agreement within sites"))?;
        made.push("site_consistency.svg");
    }
    let b_path = run_dir.join("beta_mean.csv");
    if b_path.exists() {
        let (names, cols, b) = read_keyed_numeric(&b_path)?;
        if !names.is_empty() {
            write_svg(&run.file("coefficients.svg"), svg::heatmap(&b, &names, &cols, "Posterior mean coefficients", true))?;
            made.push("coefficients.svg");
        }
    }
    let a_path = run_dir.join("auc_strata.csv");
    if a_path.exists() {
        let (h, rows) = io::read_table(&a_path)?;
        let modes: Vec<usize> = (0..h.len()).filter(|&c| h[c].starts_with("mean_auc_")).collect();
        let series: Vec<String> = modes.iter().map(|&c| h[c].trim_start_matches("mean_auc_").to_string()).collect();
        let groups: Vec<(String, Vec<Option<f64>>)> = rows
            .iter()
            .map(|r| (format!("|g|0 = {}", r[0]), modes.iter().map(|&c| r[c].parse().ok()).collect()))
            .collect();
        write_svg(&run.file("auc_strata.svg"), svg::grouped_bars(&groups, &series, "Held-out AUC by loading support size", "mean AUC", 0.5))?;
        made.push("auc_strata.svg");
    }
    for t in ["trace.csv", "summaries/trace.csv", "map/trace.csv"] {
        let p = run_dir.join(t);
        if p.exists() {
            let trace = cocluster_core::summaries::read_trace(&p)?;
            write_svg(&run.file("trace.svg"), svg::trace(&trace, "Log posterior", "log posterior"))?;
            made.push("trace.svg");
            break;
        }
    }
    for (name, title) in [("ppc_rows", "Sample totals"), ("ppc_cols", "Species totals")] {
        let p = run_dir.join(format!("{name}.csv"));
        if p.exists() {
            let (_, _, v) = read_keyed_numeric(&p)?;
            let pts: Vec<(f64, f64, f64, f64)> = v.iter().map(|r| (r[0], r[1], r[2], r[3])).collect();
            write_svg(&run.file(&format!("{name}.svg")), svg::band_scatter(&pts, title, true))?;
            made.push(if name == "ppc_rows" { "ppc_rows.svg" } else { "ppc_cols.svg" });
        }
    }
    for (_, p) in &inputs {
        let Some(stem) = p.file_stem().and_then(|s| s.to_str()) else { continue };
        if stem.starts_with("indicators_") {
            let (h, rows) = io::read_table(p)?;
            let keep: Vec<usize> = ["factor", "rank", "species_id", "name", "score"]
                .iter()
                .filter_map(|c| h.iter().position(|x| x == c))
                .collect();
            let header: Vec<String> = keep.iter().map(|&c| h[c].clone()).collect();
            let body: Vec<Vec<String>> = rows.iter().map(|r| keep.iter().map(|&c| r[c].clone()).collect()).collect();
            write_svg(&run.file(&format!("{stem}.svg")), svg::table(&header, &body, "Top indicators"))?;
        }
    }
    info!("figures: {}", made.join(", "));
    run.finish()
}

pub fn simulate(cfg: &SimConfig, out: &Path) -> Result<()> {
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let conf = format!(
        "n = {}\np = {}\nk = {}\nd = {}\nsites = {}\nsingle_factor_fraction = {}\nmean_rate = {}\nbeta_scale = {}\ntau2 = {}\nseed = {}\n",
        cfg.n, cfg.p, cfg.k, cfg.d, cfg.sites, cfg.single_factor_fraction, cfg.mean_rate, cfg.beta_scale, cfg.tau2, cfg.seed
    );
    let run = RunDir::create(out, "simulate", &conf, &[])?;
    let data = cocluster_core::simulate::simulate(cfg)?;
    data.save(&run.path)?;
    let rep = data.counts.sparsity_report();
    info!("simulated {} x {} with {} nonzeros ({:.1}% sparse)", rep.n, rep.p, rep.nnz, 100.0 * rep.sparsity);
    run.finish()
}
