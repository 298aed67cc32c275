use std::fs;

use oem_core::corpus::{generate_synthetic, SyntheticSpec};
use oem_core::harness::{fit, read_summary, run_experiment_on, sweep, CorpusSource, ExperimentConfig, Method};
use oem_core::lda::ModelParams;

fn small(method: Method, out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        method,
        k: if method.is_hdp() { 2 } else { 3 },
        minibatch_size: 50,
        local_iters: 8,
        seeds: vec![0, 1],
        eval_every: 2,
        particles: 10,
        corpus: CorpusSource::Synthetic {
            spec: "k=3,v=40,d=450,len=25".into(),
            seed: 3,
        },
        n_test: 50,
        record_wallclock: false,
        out: out.to_path_buf(),
        ..Default::default()
    }
}

#[test]
fn every_method_writes_a_complete_trace() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic(&SyntheticSpec::new(3, 40, 450, 25.0), 3).unwrap().0;
    for method in Method::ALL {
        let out = dir.path().join(method.name());
        let config = small(method, &out);
        let result = run_experiment_on(&config, &corpus).unwrap_or_else(|e| panic!("{method}: {e}"));
        assert_eq!(result.splits.len(), 2);
        for split in &result.splits {
            assert!(split.final_log_perplexity.is_finite(), "{method}");
            let trace = fs::read_to_string(out.join(format!("seed_{}/trace.csv", split.seed))).unwrap();
            let lines: Vec<&str> = trace.lines().collect();
            assert_eq!(lines[0], "iteration,docs_seen,wallclock_s,test_log_perplexity");
            // 400 training documents in minibatches of 50, evaluated every 2
            let iterations: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
            assert_eq!(iterations, ["0", "2", "4", "6", "8"], "{method}");
            assert!(lines.last().unwrap().starts_with("8,400,0.000,"));
            let model = ModelParams::load(&out.join(format!("seed_{}/model.txt", split.seed))).unwrap();
            assert_eq!(model.v(), 40);
        }
        let rows = read_summary(&out.join("summary.csv")).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].method, method);
        assert_eq!(rows[0].finals.len(), 2);
    }
}

#[test]
fn elbo_column_is_recorded_for_bayesian_methods() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic(&SyntheticSpec::new(3, 40, 450, 25.0), 3).unwrap().0;
    for method in [Method::Olda, Method::Svb, Method::VOem] {
        let out = dir.path().join(method.name());
        let config = ExperimentConfig {
            record_elbo: true,
            seeds: vec![0],
            ..small(method, &out)
        };
        let result = run_experiment_on(&config, &corpus).unwrap();
        let elbo = result.splits[0].final_elbo.unwrap();
        assert!(elbo.is_finite() && elbo < 0.0, "{method}: {elbo}");
        let trace = fs::read_to_string(out.join("seed_0/trace.csv")).unwrap();
        assert!(trace.starts_with("iteration,docs_seen,wallclock_s,test_log_perplexity,test_elbo\n"));
        let first: Vec<f64> = trace
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .map(|x| x.parse().unwrap())
            .collect();
        assert!(first[4] < elbo, "{method}: training should raise the test ELBO");
    }
}

#[test]
fn fit_reports_initial_and_every_minibatch() {
    let corpus = generate_synthetic(&SyntheticSpec::new(3, 40, 300, 25.0), 4).unwrap().0;
    let config = ExperimentConfig {
        method: Method::VOemBoost,
        k: 3,
        minibatch_size: 40,
        local_iters: 5,
        ..Default::default()
    };
    let mut seen = Vec::new();
    let fitted = fit(&config, corpus.documents(), corpus.vocab_size(), 9, |snap| {
        seen.push((snap.minibatch, snap.docs_seen));
        assert!(snap.posterior().is_none());
        assert_eq!(snap.model()?.k(), 3);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen.len(), 1 + 8);
    assert_eq!(seen[0], (0, 0));
    assert_eq!(*seen.last().unwrap(), (8, 300));
    assert!(fitted.hdp.is_none() && fitted.posterior.is_none());

    let olda = ExperimentConfig {
        method: Method::Olda,
        ..config
    };
    let fitted = fit(&olda, corpus.documents(), corpus.vocab_size(), 9, |snap| {
        assert!(snap.posterior().is_some());
        Ok(())
    })
    .unwrap();
    let posterior = fitted.posterior.unwrap();
    assert_eq!(posterior.lambda.dim(), (3, 40));
}

#[test]
fn sweep_collects_failures_without_stopping() {
    let dir = tempfile::tempdir().unwrap();
    let good = ExperimentConfig {
        seeds: vec![0],
        eval_every: 0,
        ..small(Method::GOem, &dir.path().join("good"))
    };
    let bad = ExperimentConfig {
        kappa: Some(0.5),
        ..small(Method::Svb, &dir.path().join("bad"))
    };
    let result = sweep(&[good.clone(), bad, good.clone()], 2).unwrap();
    assert_eq!(result.failures.len(), 1);
    assert_eq!(result.failures[0].0, 1);
    assert!(result.failures[0].1.contains("kappa"));
    // both good runs share a key and are merged into one row
    assert_eq!(result.rows.len(), 1);
}

#[test]
fn step_offset_changes_the_run_and_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic(&SyntheticSpec::new(3, 40, 450, 25.0), 3).unwrap().0;
    let base = ExperimentConfig {
        seeds: vec![0],
        eval_every: 0,
        ..small(Method::VOem, &dir.path().join("a"))
    };
    let a = run_experiment_on(&base, &corpus).unwrap();
    let delayed = ExperimentConfig {
        step_offset: 10,
        out: dir.path().join("b"),
        ..base.clone()
    };
    let b = run_experiment_on(&delayed, &corpus).unwrap();
    assert_ne!(a.splits[0].final_log_perplexity, b.splits[0].final_log_perplexity);

    let svb = ExperimentConfig {
        method: Method::Svb,
        step_offset: 10,
        ..base
    };
    assert!(svb.validate().unwrap_err().to_string().contains("step_offset"));
}
