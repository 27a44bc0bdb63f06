use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use anyhow::anyhow;
use fedhorizon::config::{load_featurized, ExperimentConfig, ExtractorConfig};
use fedhorizon::data::{load_manifest, save_manifest, synthesize_dataset, NUM_CLASSES};
use fedhorizon::federation::{evaluate, run_centralized, run_federation, run_single_node, FederationError};
use fedhorizon::metrics::collapse_to_binary;
use fedhorizon::model::predict;
use fedhorizon::transport::{node_run, Coordinator, NetworkConfig, NodeAgent, TransportError};
use fedhorizon::{FederationConfig, MetricsReport, ModelSpec, ParameterVector, SiteDataset, TrainingHistory};
use serde::Serialize;

use crate::exit::Failure;
use crate::report::{render_table, series_rows, ExperimentResult, RunRecord, SERIES_HEADER};
use crate::Scenario;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Failure::data(anyhow!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::data(anyhow!("{}: {e}", path.display())))
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("results serialize");
    s.push('\n');
    s
}

pub fn synth(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let synth = cfg.synth.as_ref().ok_or_else(|| Failure::usage(anyhow!("{} has no synth section", config.display())))?;
    let mut sites = synthesize_dataset(&synth.training_spec())?;
    if let Some(spec) = synth.holdout_spec() {
        sites.extend(synthesize_dataset(&spec)?);
    }
    for ds in &sites {
        let path = out.join(format!("{}.csv", ds.site_id()));
        fs::create_dir_all(out).map_err(|e| Failure::data(anyhow!("{}: {e}", out.display())))?;
        save_manifest(ds, &path)?;
        println!("{}: {} samples, class counts {:?}", path.display(), ds.len(), ds.class_counts());
    }
    Ok(())
}

/// One finished training run.
struct Trained {
    params: ParameterVector,
    history: TrainingHistory,
}

fn scenario_name(s: Scenario) -> &'static str {
    match s {
        Scenario::Single => "single_node",
        Scenario::Central => "centralized",
        Scenario::Fed => "federated",
        Scenario::Net => "networked",
    }
}

/// Loopback federation: a coordinator on an ephemeral port and one thread per node.
fn run_networked(cfg: &FederationConfig, sites: &[SiteDataset], test: &SiteDataset, net: &NetworkConfig) -> Result<Trained, Failure> {
    let coordinator = Coordinator::bind("127.0.0.1:0", *net)?;
    let endpoint = coordinator
        .local_addr()
        .map_err(|source| Failure::from(TransportError::Bind { endpoint: "127.0.0.1:0".into(), source }))?
        .to_string();
    let ids: Vec<String> = sites.iter().map(|s| s.site_id().to_string()).collect();
    let agents = sites.iter().map(|s| Ok(NodeAgent::new(s.site_id(), s.examples()?)?)).collect::<Result<Vec<_>, Failure>>()?;
    let test = test.examples()?;
    thread::scope(|scope| {
        let endpoint = endpoint.as_str();
        let handles: Vec<_> = agents.into_iter().map(|a| scope.spawn(move || node_run(endpoint, a, net))).collect();
        let served = coordinator.serve(cfg, &ids, &test);
        for h in handles {
            let node = h.join().expect("node thread panicked");
            if served.is_ok() {
                node?;
            }
        }
        let (params, history) = served?;
        Ok(Trained { params, history })
    })
}

fn train(scenario: Scenario, cfg: &FederationConfig, sites: &[SiteDataset], site: Option<&SiteDataset>, test: &SiteDataset, net: &NetworkConfig) -> Result<Trained, Failure> {
    let (params, history) = match scenario {
        Scenario::Single => run_single_node(site.expect("single-node runs name a site"), test, cfg)?,
        Scenario::Central => run_centralized(sites, test, cfg)?,
        Scenario::Fed => run_federation(cfg, sites, test)?,
        Scenario::Net => return run_networked(cfg, sites, test, net),
    };
    Ok(Trained { params, history })
}

pub fn run(config: &Path, scenarios: &[Scenario], runs: usize, out: &Path) -> Result<(), Failure> {
    if runs == 0 {
        return Err(Failure::usage(anyhow!("--runs must be at least 1")));
    }
    let cfg = ExperimentConfig::load(config)?;
    let test_path = cfg.test_manifest.clone().ok_or_else(|| Failure::usage(anyhow!("{} has no test_manifest", config.display())))?;
    let sites = cfg.load_sites()?;
    let test = cfg.load_site(&test_path)?;
    let dim = ExperimentConfig::common_dim(sites.iter().chain([&test]))?;
    let net = cfg.network.to_network_config()?;

    let mut scenarios = scenarios.to_vec();
    scenarios.sort();
    scenarios.dedup();
    let mut jobs: Vec<(String, Scenario, Option<&SiteDataset>)> = Vec::new();
    for &s in &scenarios {
        if s == Scenario::Single {
            jobs.extend(sites.iter().map(|site| (format!("single_node:{}", site.site_id()), s, Some(site))));
        } else {
            jobs.push((scenario_name(s).to_string(), s, None));
        }
    }

    let mut results = Vec::with_capacity(jobs.len());
    for (run_id, scenario, site) in jobs {
        let file_stem = run_id.replace(':', "-");
        let mut records = Vec::with_capacity(runs);
        let mut series = format!("{SERIES_HEADER}\n");
        for i in 0..runs {
            let fcfg = cfg.federation_config(dim, i as u64)?;
            log::info!("{run_id}: run {i} (seed {})", fcfg.seed);
            let trained = train(scenario, &fcfg, &sites, site, &test, &net).map_err(|f| f.context(format!("{run_id} run {i}")))?;
            let metrics = match trained.history.final_metrics() {
                Some(m) => m.clone(),
                None => evaluate(&fcfg.model, &trained.params, &test.examples()?)?,
            };
            series_rows(i, &trained.history, &mut series);
            write_file(&out.join("params").join(format!("{file_stem}-run{i}.params")), trained.params.to_text())?;
            records.push(RunRecord { seed: fcfg.seed, metrics, history_digest: trained.history.digest(), params_digest: trained.params.digest() });
        }
        write_file(&out.join("series").join(format!("{file_stem}.csv")), series)?;
        results.push(ExperimentResult::new(run_id, scenario_name(scenario), records));
    }

    let table = render_table(&results);
    write_file(&out.join("results.json"), to_json(&results))?;
    write_file(&out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct ServeOutput {
    history_digest: String,
    params_digest: String,
    history: TrainingHistory,
}

pub fn serve(config: &Path, listen: &str, out: Option<&Path>, params_out: Option<&Path>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let test = cfg.load_test()?;
    let dim = match (cfg.model.input_dim, &test) {
        (Some(d), _) => d,
        (None, Some(t)) => ExperimentConfig::common_dim([t])?,
        (None, None) => return Err(Failure::usage(anyhow!("set model.input_dim or test_manifest so the coordinator knows the feature dimension"))),
    };
    let fcfg = cfg.federation_config(dim, 0)?;
    let test_examples = match &test {
        Some(t) => t.examples()?,
        None => Vec::new(),
    };
    let coordinator = Coordinator::bind(listen, cfg.network.to_network_config()?)?;
    if let Ok(addr) = coordinator.local_addr() {
        eprintln!("listening on {addr}, waiting for {}", cfg.node_ids().join(", "));
    }
    let (params, history) = coordinator.serve(&fcfg, &cfg.node_ids(), &test_examples)?;
    let output = ServeOutput { history_digest: history.digest(), params_digest: params.digest(), history: history.without_timings() };
    if let Some(path) = out {
        write_file(path, to_json(&output))?;
    }
    if let Some(path) = params_out {
        write_file(path, params.to_text())?;
    }
    println!("rounds {}", output.history.rounds.len());
    println!("params digest {}", output.params_digest);
    println!("history digest {}", output.history_digest);
    if let Some(m) = output.history.final_metrics() {
        println!("{m}");
    }
    Ok(())
}

fn extractor_arg(id: Option<&str>, config: &str) -> Result<Option<ExtractorConfig>, Failure> {
    let Some(id) = id else { return Ok(None) };
    let config = serde_json::from_str(config).map_err(|e| Failure::usage(anyhow!("--extractor-config: {e}")))?;
    Ok(Some(ExtractorConfig { id: id.to_string(), config }))
}

fn load_examples(manifest: &Path, extractor: Option<&str>, extractor_config: &str) -> Result<SiteDataset, Failure> {
    let ex = extractor_arg(extractor, extractor_config)?;
    Ok(load_featurized(load_manifest(manifest)?, ex.as_ref())?)
}

pub fn node(
    id: &str,
    manifest: &Path,
    connect: &str,
    extractor: Option<&str>,
    extractor_config: &str,
    attempts: u32,
    backoff_ms: u64,
) -> Result<(), Failure> {
    let ds = load_examples(manifest, extractor, extractor_config)?;
    if ds.site_id() != id {
        return Err(Failure::usage(anyhow!("{} holds site {:?}, but the node is {id:?}", manifest.display(), ds.site_id())));
    }
    let agent = NodeAgent::new(id, ds.examples()?)?;
    let net = NetworkConfig { connect_attempts: attempts.max(1), connect_backoff: Duration::from_millis(backoff_ms), ..NetworkConfig::default() };
    let outcome = node_run(connect, agent, &net)?;
    println!("node {id}: trained {} rounds", outcome.rounds_trained);
    if let Some(d) = outcome.final_digest {
        println!("params digest {}", hex::encode(d));
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    four_class: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    binary: Option<MetricsReport>,
}

/// Hidden width of a head with `count` parameters over `dim` inputs.
fn infer_hidden(count: usize, dim: usize) -> Option<usize> {
    let k = NUM_CLASSES;
    let rest = count.checked_sub(k)?;
    let per_unit = dim + 1 + k;
    (rest % per_unit == 0 && rest > 0).then_some(rest / per_unit)
}

pub fn eval(params: &Path, manifest: &Path, binary: bool, json: bool, extractor: Option<&str>, extractor_config: &str) -> Result<(), Failure> {
    let text = fs::read_to_string(params).map_err(|e| Failure::data(anyhow!("{}: {e}", params.display())))?;
    let theta = ParameterVector::from_text(&text).map_err(|e| Failure::data(e).context(params.display().to_string()))?;
    let ds = load_examples(manifest, extractor, extractor_config)?;
    let dim = ExperimentConfig::common_dim([&ds])?;
    let hidden = infer_hidden(theta.len(), dim)
        .ok_or_else(|| Failure::data(anyhow!("{} parameters do not fit a {NUM_CLASSES}-class head over {dim} features", theta.len())))?;
    let spec = ModelSpec::new(dim, hidden, NUM_CLASSES, 0.0)?;
    let examples = ds.examples()?;
    let truth: Vec<usize> = examples.iter().map(|e| e.class + 1).collect();
    let predicted = examples.iter().map(|e| Ok(predict(&spec, &theta, &e.features)? + 1)).collect::<Result<Vec<_>, Failure>>()?;
    let metric_err = |e| Failure::from(FederationError::Metrics(e));
    let four_class = MetricsReport::evaluate(&truth, &predicted, NUM_CLASSES).map_err(metric_err)?;
    let binary = if binary {
        Some(MetricsReport::from_confusion(&collapse_to_binary(&truth, &predicted).map_err(metric_err)?).map_err(metric_err)?)
    } else {
        None
    };
    let output = EvalOutput { four_class, binary };
    if json {
        print!("{}", to_json(&output));
    } else {
        println!("four-class ({} samples, hidden {hidden})", truth.len());
        println!("{}", output.four_class);
        if let Some(b) = &output.binary {
            println!("\nbinary (control vs pathogenic)");
            println!("{b}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hidden_width_is_recovered_from_the_parameter_count() {
        let spec = ModelSpec::new(7, 5, NUM_CLASSES, 0.2).unwrap();
        assert_eq!(infer_hidden(spec.param_count(), 7), Some(5));
        assert_eq!(infer_hidden(spec.param_count() + 1, 7), None);
        assert_eq!(infer_hidden(3, 7), None);
    }
}
