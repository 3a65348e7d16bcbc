use letet::cache::{Cache, CacheStatus};
use letet_core::landmarks::LandmarkMethod;
use letet_core::model::{ModelConfig, PrepConfig};
use letet_core::synth::{generate_ball_mesh, SynthSpec};

fn prep() -> PrepConfig {
    let cfg = ModelConfig {
        n_landmarks: 8,
        ..ModelConfig::default()
    };
    PrepConfig::for_model(&cfg, 0)
}

fn mesh() -> letet_core::mesh::TetMesh {
    generate_ball_mesh(&SynthSpec {
        grid_resolution: 4,
        ..SynthSpec::default()
    })
    .unwrap()
}

#[test]
fn second_lookup_hits_with_identical_contents() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Cache::new(dir.path());
    let (lbo, lm, status) = cache.load_or_compute(&mesh(), &prep()).unwrap();
    assert_eq!(status, CacheStatus::Miss);
    let (lbo2, lm2, status) = cache.load_or_compute(&mesh(), &prep()).unwrap();
    assert_eq!(status, CacheStatus::Hit);
    assert_eq!(lbo, lbo2);
    assert_eq!(lm, lm2);
}

#[test]
fn key_depends_on_mesh_and_settings() {
    let m = mesh();
    let p = prep();
    let k = Cache::key(&m, &p);
    assert_eq!(k, Cache::key(&m, &p));
    assert_ne!(
        k,
        Cache::key(
            &m,
            &PrepConfig {
                radius: 0.6,
                ..p.clone()
            }
        )
    );
    assert_ne!(
        k,
        Cache::key(
            &m,
            &PrepConfig {
                landmark_method: LandmarkMethod::Fps,
                ..p.clone()
            }
        )
    );
    let mut v = m.vertices().to_vec();
    v[0][0] += 1e-9;
    assert_ne!(k, Cache::key(&m.with_vertices(v).unwrap(), &p));
}

#[test]
fn corrupted_entry_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Cache::new(dir.path());
    let (lbo, lm, _) = cache.load_or_compute(&mesh(), &prep()).unwrap();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        std::fs::write(entry.unwrap().path(), "{\"key\": \"truncated").unwrap();
    }
    let (lbo2, lm2, status) = cache.load_or_compute(&mesh(), &prep()).unwrap();
    assert_eq!(status, CacheStatus::Recomputed);
    assert_eq!((lbo, lm), (lbo2, lm2));
    assert_eq!(cache.load_or_compute(&mesh(), &prep()).unwrap().2, CacheStatus::Hit);
}
