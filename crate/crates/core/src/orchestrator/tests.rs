use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use super::protocol::{write_response, StatusFile};
use super::*;
use crate::types::{Annotation, BoundingBox, ImageRecord};

fn synthetic_manifest(train: u64, test: u64) -> DatasetManifest {
    let mut rng = rng_for(&[99]);
    let mut next = 0u64;
    let mut split = |n: u64| -> Vec<ImageRecord> {
        (0..n)
            .map(|_| {
                next += 1;
                let count = rng.random_range(1..4);
                ImageRecord {
                    image_id: next,
                    file_name: format!("{next:06}.png"),
                    width: 300,
                    height: 300,
                    annotations: (0..count)
                        .map(|_| {
                            let x = rng.random_range(0.0..200.0);
                            let y = rng.random_range(0.0..200.0);
                            let s = rng.random_range(20.0..90.0);
                            Annotation {
                                bbox: BoundingBox::new(x, y, x + s, y + s).unwrap(),
                                category_id: rng.random_range(0..3),
                            }
                        })
                        .collect(),
                }
            })
            .collect()
    };
    let train = split(train);
    let test = split(test);
    DatasetManifest::new(
        "toy",
        vec!["a".into(), "b".into(), "c".into()],
        BTreeMap::from([("train".to_string(), train), ("test".to_string(), test)]),
    )
    .unwrap()
}

fn small_config() -> ALConfig {
    let mut al = ALConfig {
        initial_labeled: 20,
        steps: 3,
        record_wall_clock: false,
        seeds: vec![0, 1],
        jobs: 2,
        ..ALConfig::default()
    };
    al.query.query_size = 10;
    al.query.dropout_samples = 4;
    al
}

fn plan<'a>(al: &'a ALConfig, manifest: &'a DatasetManifest, out: &Path) -> RunPlan<'a> {
    RunPlan {
        al,
        manifest,
        manifest_path: "unused".into(),
        backend_options: serde_json::Value::Null,
        fingerprint: "fp".into(),
        config_snapshot: serde_json::json!({"k": 1}),
        out_root: out.to_path_buf(),
    }
}

fn sim(manifest: &DatasetManifest) -> InProcessSim {
    InProcessSim::new(Some(std::sync::Arc::new(manifest.clone())))
}

#[test]
fn init_pool_is_seeded_and_disjoint() {
    let ids: Vec<u64> = (0..50).collect();
    let a = init_pool(&ids, 10, 3).unwrap();
    let b = init_pool(&ids, 10, 3).unwrap();
    let c = init_pool(&ids, 10, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.labeled(), c.labeled());
    assert_eq!(a.labeled().len(), 10);
    assert_eq!(a.unlabeled().len(), 40);
    assert!(a.labeled().is_disjoint(a.unlabeled()));
    assert!(init_pool(&ids, 51, 0).is_err());
}

#[test]
fn loop_records_every_step() {
    let m = synthetic_manifest(80, 30);
    let al = small_config();
    let out = tempfile::tempdir().unwrap();
    let p = plan(&al, &m, out.path());
    for strategy in Strategy::ALL {
        let log = run_al(&p, &sim(&m), strategy, 1).unwrap();
        assert_eq!(log.steps.len(), al.steps + 1);
        let mut seen = init_pool(
            &m.split("train").iter().map(|r| r.image_id).collect::<Vec<_>>(),
            20,
            1,
        )
        .unwrap()
        .labeled()
        .clone();
        for (t, rec) in log.steps.iter().enumerate() {
            assert_eq!(rec.step, t);
            assert_eq!(rec.images_labeled, 20 + t * 10);
            assert!((0.0..=1.0).contains(&rec.map50));
            if t < al.steps {
                assert_eq!(rec.queried.len(), 10);
                for id in &rec.queried {
                    assert!(seen.insert(*id), "{strategy}: {id} queried twice");
                }
            } else {
                assert!(rec.queried.is_empty());
            }
            assert_eq!(rec.seconds, 0.0);
        }
        let dir = RunLog::dir_in(out.path(), strategy.name(), 1);
        assert!(dir.join(RUNLOG_JSON).is_file());
        assert!(!dir.join("work").exists());
    }
}

#[test]
fn reruns_are_byte_identical_and_resume_matches() {
    let m = synthetic_manifest(80, 30);
    let al = small_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let read = |root: &Path| fs::read(RunLog::dir_in(root, "entropy", 0).join(RUNLOG_JSON)).unwrap();
    run_al(&plan(&al, &m, a.path()), &sim(&m), Strategy::Entropy, 0).unwrap();
    run_al(&plan(&al, &m, b.path()), &sim(&m), Strategy::Entropy, 0).unwrap();
    let full = read(a.path());
    assert_eq!(full, read(b.path()));

    // Truncate to two records and resume.
    let path = RunLog::dir_in(b.path(), "entropy", 0).join(RUNLOG_JSON);
    let mut log = RunLog::read(&path).unwrap();
    log.steps.truncate(2);
    log.write(path.parent().unwrap()).unwrap();
    let calls = AtomicUsize::new(0);
    let counting = Counting { inner: sim(&m), calls: &calls };
    run_al(&plan(&al, &m, b.path()), &counting, Strategy::Entropy, 0).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), al.steps + 1 - 2);
    assert_eq!(full, read(b.path()));

    // A complete log is not rerun.
    run_al(&plan(&al, &m, b.path()), &counting, Strategy::Entropy, 0).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), al.steps + 1 - 2);
}

#[test]
fn resume_rejects_other_fingerprints() {
    let m = synthetic_manifest(80, 30);
    let al = small_config();
    let out = tempfile::tempdir().unwrap();
    run_al(&plan(&al, &m, out.path()), &sim(&m), Strategy::Random, 0).unwrap();
    let mut other = plan(&al, &m, out.path());
    other.fingerprint = "different".into();
    let err = run_al(&other, &sim(&m), Strategy::Random, 0).unwrap_err();
    assert!(matches!(err, RunError::Resume { .. }), "{err}");
}

#[test]
fn seeds_change_history_not_fingerprint() {
    let m = synthetic_manifest(80, 30);
    let al = small_config();
    let out = tempfile::tempdir().unwrap();
    let p = plan(&al, &m, out.path());
    let a = run_al(&p, &sim(&m), Strategy::Random, 0).unwrap();
    let b = run_al(&p, &sim(&m), Strategy::Random, 1).unwrap();
    assert_eq!(a.fingerprint, b.fingerprint);
    assert_ne!(a.steps[0].queried, b.steps[0].queried);
}

#[test]
fn pool_too_small_is_a_config_error() {
    let m = synthetic_manifest(40, 10);
    let al = small_config();
    let out = tempfile::tempdir().unwrap();
    let err = run_al(&plan(&al, &m, out.path()), &sim(&m), Strategy::Entropy, 0).unwrap_err();
    assert_eq!(err.category(), "config");
}

struct Counting<'a> {
    inner: InProcessSim,
    calls: &'a AtomicUsize,
}

impl Backend for Counting<'_> {
    fn name(&self) -> &str {
        "counting"
    }
    fn execute(&self, dir: &Path) -> Result<(), BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.execute(dir)
    }
}

/// Fails every request that asks for dropout samples.
struct NoSamples(InProcessSim);

impl Backend for NoSamples {
    fn name(&self) -> &str {
        "no-samples"
    }
    fn execute(&self, dir: &Path) -> Result<(), BackendError> {
        let req = BackendRequest::read(dir).map_err(|e| BackendError::Internal(e.to_string()))?;
        if req.dropout_samples > 0 {
            write_response(
                dir,
                None,
                &StatusFile {
                    ok: false,
                    message: Some("dropout unsupported".into()),
                },
            )
            .map_err(|e| BackendError::Internal(e.to_string()))?;
            return Ok(());
        }
        self.0.execute(dir)
    }
}

#[test]
fn matrix_continues_past_failures() {
    let m = synthetic_manifest(80, 30);
    let al = small_config();
    let out = tempfile::tempdir().unwrap();
    let outcomes = run_matrix(&plan(&al, &m, out.path()), &NoSamples(sim(&m))).unwrap();
    assert_eq!(outcomes.len(), Strategy::ALL.len() * al.seeds.len());
    for o in &outcomes {
        match (&o.result, o.strategy.needs_samples()) {
            (Ok(log), false) => assert_eq!(log.steps.len(), al.steps + 1),
            (Err(e), true) => {
                assert_eq!(e.category(), "protocol");
                assert!(e.to_string().contains("dropout unsupported"));
            }
            (r, _) => panic!("{}: unexpected {:?}", o.strategy, r.as_ref().err()),
        }
    }
}

/// Responds without writing the ready marker.
struct Silent;

impl Backend for Silent {
    fn name(&self) -> &str {
        "silent"
    }
    fn execute(&self, _: &Path) -> Result<(), BackendError> {
        Ok(())
    }
}

#[test]
fn missing_response_is_a_protocol_error() {
    let m = synthetic_manifest(80, 30);
    let mut al = small_config();
    al.backend.keep_work = true;
    let out = tempfile::tempdir().unwrap();
    let err = run_al(&plan(&al, &m, out.path()), &Silent, Strategy::Entropy, 0).unwrap_err();
    assert!(matches!(err, RunError::Protocol { step: 0, source: ProtocolError::NotReady }), "{err}");
    let request = RunLog::dir_in(out.path(), "entropy", 0).join("work/step_000/request.json");
    assert!(request.is_file());
}

#[test]
fn request_contents() {
    let m = synthetic_manifest(80, 30);
    let mut al = small_config();
    al.backend.keep_work = true;
    let out = tempfile::tempdir().unwrap();
    run_al(&plan(&al, &m, out.path()), &sim(&m), Strategy::MutualInformation, 2).unwrap();
    let work = RunLog::dir_in(out.path(), "mutual_information", 2).join("work");
    let first = BackendRequest::read(&work.join("step_000")).unwrap();
    assert_eq!(first.phase, Phase::Query);
    assert_eq!(first.dropout_samples, 4);
    assert_eq!(first.labeled.images.len(), 20);
    assert_eq!(first.pool_images.len(), 60);
    assert_eq!(first.test_images.len(), 30);
    assert_eq!(first.categories, vec!["a", "b", "c"]);
    let last = BackendRequest::read(&work.join("step_003")).unwrap();
    assert_eq!(last.phase, Phase::Final);
    assert!(last.pool_images.is_empty());
    assert_eq!(last.dropout_samples, 0);
    assert_eq!(last.labeled.images.len(), 50);
}
