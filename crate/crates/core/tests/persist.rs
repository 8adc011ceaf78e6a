use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rtrrl_core::agent::Hyperparams;
use rtrrl_core::bc::{
    flatten_params, init_policy, write_params, BcConfig, DemoDataset, DemoEpisode, DemoMeta,
};
use rtrrl_core::cells::{CellKind, CellParams, CellSpec};
use rtrrl_core::env::ObservationSpec;
use rtrrl_core::heads::CriticHead;
use rtrrl_core::persist::{
    inspect_checkpoint, load_checkpoint, load_dataset, read_checkpoint, save_checkpoint,
    save_dataset, write_checkpoint, write_dataset, Checkpoint, CriticBundle, DemoReader, Lineage,
    PersistError, RunConfig,
};

fn checkpoint(kind: CellKind, seed: u64, critic: bool) -> Checkpoint {
    let spec = CellSpec::new(kind, 3, 4, 0.5).unwrap();
    let cfg = BcConfig {
        seed,
        encoder_hidden: 5,
        ..BcConfig::default()
    };
    let mut policy = init_policy(&spec, 9, vec![0.5, 4.0], &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = flatten_params(&policy);
    flat.iter_mut()
        .for_each(|v| *v += rng.random_range(-0.1..0.1));
    write_params(&mut policy, &flat);
    let critic = critic.then(|| CriticBundle {
        cell: CellParams::init(&spec, seed + 1),
        head: CriticHead::init(spec.feature_dim(), &mut rng),
    });
    Checkpoint {
        policy,
        critic,
        observation: ObservationSpec::default(),
        lineage: Lineage {
            master_seed: 7,
            stage: "pretrain".into(),
            index: 2,
            seed,
        },
    }
}

fn bytes(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(&mut out, ck).unwrap();
    out
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for kind in CellKind::ALL {
        for critic in [false, true] {
            let ck = checkpoint(kind, 3, critic);
            let path = dir.path().join(format!("{}-{critic}.ckpt", kind.name()));
            save_checkpoint(&path, &ck).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back, ck);
            assert_eq!(bytes(&back), bytes(&ck));
            assert_eq!(back.param_checksum(), ck.param_checksum());
        }
    }
}

#[test]
fn corrupt_payload_byte_fails_checksum() {
    let ck = checkpoint(CellKind::Lru, 4, true);
    let mut b = bytes(&ck);
    let n = b.len();
    for pos in [n - 1, n - 200, n / 2 + 300] {
        let mut c = b.clone();
        c[pos] ^= 0x10;
        match read_checkpoint(&mut c.as_slice()) {
            Err(PersistError::Checksum { .. }) => {}
            other => panic!("byte {pos}: expected checksum error, got {other:?}"),
        }
    }
    b[8] = 99;
    assert!(matches!(
        read_checkpoint(&mut b.as_slice()),
        Err(PersistError::Version { found: 99, .. })
    ));
    b[0] = b'X';
    assert!(matches!(
        read_checkpoint(&mut b.as_slice()),
        Err(PersistError::BadMagic { .. })
    ));
}

#[test]
fn truncated_checkpoint_is_an_error() {
    let b = bytes(&checkpoint(CellKind::Ctrnn, 1, false));
    assert!(read_checkpoint(&mut &b[..b.len() - 8]).is_err());
}

#[test]
fn inspection_reads_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint(CellKind::Lrcssm, 5, false);
    let path = dir.path().join("x.ckpt");
    save_checkpoint(&path, &ck).unwrap();
    // Drop the whole payload: the header must still parse.
    let full = std::fs::read(&path).unwrap();
    let header_len = u64::from_le_bytes(full[16..24].try_into().unwrap()) as usize;
    std::fs::write(&path, &full[..24 + header_len]).unwrap();
    let h = inspect_checkpoint(&path).unwrap();
    assert_eq!(h.cell_kind, CellKind::Lrcssm);
    assert_eq!(
        (h.input_dim, h.hidden_dim, h.obs_dim, h.action_dim),
        (3, 4, 9, 2)
    );
    assert_eq!(h.lineage.seed, 5);
    assert!(!h.has_critic);
    assert!(h.arrays.iter().any(|a| a.name == "cell.w_a"));
    assert!(load_checkpoint(&path).is_err());
}

fn dataset(episodes: usize, steps: usize, rasters: bool) -> DemoDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let meta = DemoMeta {
        obs_mode: "features".into(),
        obs_dim: 4,
        action_dim: 2,
        action_scale: vec![0.5, 4.0],
        dt: 0.1,
        source: "test".into(),
    };
    let episodes = (0..episodes)
        .map(|_| DemoEpisode {
            observations: (0..steps)
                .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
                .collect(),
            actions: (0..steps)
                .map(|_| vec![rng.random::<f64>(), -rng.random::<f64>()])
                .collect(),
            rasters: rasters.then(|| (0..steps).map(|_| vec![1.0, 0.0, 1.0]).collect()),
        })
        .collect();
    DemoDataset { meta, episodes }
}

#[test]
fn dataset_round_trip_and_streaming() {
    let dir = tempfile::tempdir().unwrap();
    for rasters in [false, true] {
        let ds = dataset(3, 17, rasters);
        let path = dir.path().join(format!("d{rasters}.demos"));
        save_dataset(&path, &ds).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
        let reader = DemoReader::open(&path).unwrap();
        assert_eq!(reader.header().episodes, 3);
        let eps: Vec<_> = reader.map(Result::unwrap).collect();
        assert_eq!(eps.len(), 3);
        assert_eq!(eps[2], ds.episodes[2]);
    }
}

fn dataset_bytes(ds: &DemoDataset) -> Vec<u8> {
    let mut b = Vec::new();
    write_dataset(&mut b, ds).unwrap();
    b
}

#[test]
fn truncated_dataset_names_the_episode() {
    let b = dataset_bytes(&dataset(3, 10, false));
    let cut = &b[..b.len() - 20];
    let results: Vec<_> = DemoReader::new(cut).unwrap().collect();
    assert!(results[0].is_ok() && results[1].is_ok());
    assert!(matches!(
        results[2],
        Err(PersistError::Truncated { episode: 2 })
    ));
}

#[test]
fn dataset_rejects_action_dim_mismatch() {
    let mut b = dataset_bytes(&dataset(2, 5, false));
    let header_len = u64::from_le_bytes(b[16..24].try_into().unwrap()) as usize;
    // EPIS tag, u64 steps, u32 obs dim, then the u32 action dim
    let at = 24 + header_len + 4 + 8 + 4;
    assert_eq!(u32::from_le_bytes(b[at..at + 4].try_into().unwrap()), 2);
    b[at..at + 4].copy_from_slice(&3u32.to_le_bytes());
    let first = DemoReader::new(b.as_slice()).unwrap().next().unwrap();
    assert!(matches!(
        first,
        Err(PersistError::EpisodeDim {
            episode: 0,
            what: "action",
            expected: 2,
            got: 3
        })
    ));
}

#[test]
fn corrupt_dataset_body_fails_checksum() {
    let mut b = dataset_bytes(&dataset(1, 5, false));
    let n = b.len();
    b[n - 10] ^= 1;
    let r = DemoReader::new(b.as_slice()).unwrap().next().unwrap();
    assert!(matches!(
        r,
        Err(PersistError::EpisodeChecksum { episode: 0 })
    ));
}

#[test]
fn run_config_toml_round_trip() {
    let mut cfg = RunConfig::default();
    cfg.master_seed = 99;
    cfg.kinds = vec![CellKind::Lru];
    cfg.hyper.alpha_a = 2.5e-7;
    cfg.shift.sensor_bias = -0.3;
    let text = cfg.to_toml();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.run");
    cfg.save(&p).unwrap();
    assert_eq!(RunConfig::load(&p).unwrap(), cfg);
}

#[test]
fn run_config_rejects_unknown_keys() {
    assert!(RunConfig::from_toml("master_seed = 1\nbogus = 2\n").is_err());
    assert!(RunConfig::from_toml("[hyper]\nalpha_q = 1.0\n").is_err());
    assert!(matches!(
        RunConfig::from_toml("seeds_per_kind = 0\n"),
        Err(PersistError::Config(_))
    ));
}

#[test]
fn missing_hyper_section_gives_published_defaults() {
    let cfg = RunConfig::from_toml("master_seed = 5\n").unwrap();
    assert_eq!(cfg.hyper, Hyperparams::default());
    let h = &cfg.hyper;
    assert_eq!(
        (h.gamma, h.lambda_a, h.lambda_c, h.lambda_r),
        (0.99, 0.95, 0.95, 0.95)
    );
    assert_eq!(
        (h.alpha_a, h.alpha_c, h.eta_h, h.eta_p),
        (1e-6, 1e-5, 0.0, 1e-5)
    );
}
