use std::collections::BTreeMap;

use crtlab::records::{from_csv, to_csv, RecordStore};
use crtlab::tokens::TokenDump;
use crtlab::{checkpoint, corpus, kv, Error};
use crtlab_core::config::{CorpusConfig, ExperimentConfig};
use crtlab_core::generator::{Generator, GeneratorConfig};
use crtlab_core::quantize::QuantizerConfig;
use crtlab_core::scaling::{flops_estimate, MetricScores, RunRecord, RunStatus};
use crtlab_core::tokenizer::{TokenGrid, Tokenizer, TokenizerConfig};
use proptest::prelude::*;

fn record(id: &str, val_loss: Option<f64>, status: RunStatus) -> RunRecord {
    let mut axes = BTreeMap::new();
    axes.insert("generator".to_string(), r#"{"heads":1,"layers":2}"#.to_string());
    RunRecord {
        run_id: id.into(),
        stage: 2,
        model: "L2H1".into(),
        tokenizer: "vq64-r32-base".into(),
        iterations: 10,
        params: 1234,
        tokens: 5678,
        flops: flops_estimate(1234, 5678).unwrap(),
        val_loss,
        metrics: MetricScores { frechet: Some(1.25), psnr: None, ms_ssim: Some(0.5) },
        config_hash: "abc".into(),
        seed: 3,
        wall_time_s: 1.5,
        status,
        axes,
    }
}

#[test]
fn config_documents_round_trip() {
    let mut c = ExperimentConfig::default();
    c.tokenizer.crt.enabled = true;
    c.tokenizer.quantizer.codes = 128;
    c.eval.cfg_scales = vec![1.0, 3.5];
    let text = kv::to_string(&c).unwrap();
    let back: ExperimentConfig = kv::resolve(Some(&text), &[]).unwrap();
    assert_eq!(back, c);
    assert_eq!(kv::to_string(&back).unwrap(), text);
}

#[test]
fn csv_round_trip_keeps_every_field() {
    let recs =
        vec![record("a", Some(1.5), RunStatus::Completed), record("b", None, RunStatus::Failed { reason: "diverged, \"badly\"".into() })];
    let text = to_csv(&recs).unwrap();
    assert_eq!(from_csv(&text).unwrap(), recs);
}

proptest! {
    #[test]
    fn csv_round_trip_any_loss(loss in prop::option::of(-1e6f64..1e6), reason in "[a-z ,\"\n]{0,12}") {
        let recs = vec![record("x", loss, RunStatus::Completed), record("y", loss, RunStatus::Failed { reason })];
        prop_assert_eq!(from_csv(&to_csv(&recs).unwrap()).unwrap(), recs);
    }
}

#[test]
fn record_store_refuses_duplicate_completed_ids() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::new(dir.path().join("records.jsonl"));
    assert!(store.read_all().unwrap().is_empty());
    store.append(&record("a", None, RunStatus::Failed { reason: "x".into() })).unwrap();
    store.append(&record("a", Some(2.0), RunStatus::Completed)).unwrap();
    assert!(matches!(store.append(&record("a", Some(1.0), RunStatus::Completed)), Err(Error::Refused(_))));
    let latest = store.latest().unwrap();
    assert_eq!(latest.len(), 1);
    assert!(latest[0].completed());
    let mut bad = record("b", Some(1.0), RunStatus::Completed);
    bad.flops += 1;
    assert!(store.append(&bad).is_err());
}

fn tiny_tokenizer() -> TokenizerConfig {
    TokenizerConfig {
        side: 16,
        widths: vec![8, 8],
        res_blocks: 1,
        latent_width: 8,
        quantizer: QuantizerConfig { codes: 16, dim: 4, input_width: 8, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn checkpoints_restore_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_tokenizer();
    cfg.crt.enabled = true;
    let tok = Tokenizer::<f32>::new(cfg, 9).unwrap();
    let p = dir.path().join("t.ckpt");
    checkpoint::save_tokenizer(&p, &tok, 9, 0).unwrap();
    let back = checkpoint::load_tokenizer::<f32>(&p).unwrap();
    assert_eq!(back.config, tok.config);
    let img = crtlab_core::Tensor::from_fn(&[3, 16, 16], |i| ((i * 7 % 13) as f32 / 6.5) - 1.0);
    let (a, b) = (tok.reconstruct(&[img.clone()]).unwrap(), back.reconstruct(&[img]).unwrap());
    assert_eq!(a[0].data(), b[0].data());

    let gen =
        Generator::<f32>::new(GeneratorConfig { layers: 1, heads: 1, vocab: 16, classes: 3, seq_len: 4, ..Default::default() }, 5).unwrap();
    let p = dir.path().join("g.ckpt");
    checkpoint::save_generator(&p, &gen, 5, 0).unwrap();
    let back = checkpoint::load_generator::<f32>(&p).unwrap();
    let conds = [crtlab_core::generator::Cond::Class(2)];
    assert_eq!(gen.token_losses(&conds, &[1, 2, 3, 4]).unwrap(), back.token_losses(&conds, &[1, 2, 3, 4]).unwrap());

    let mut bytes = std::fs::read(&p).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 1;
    assert!(checkpoint::decode::<f32>(&bytes).is_err());
    assert!(checkpoint::load_tokenizer::<f32>(&p).is_err());
}

#[test]
fn token_dumps_round_trip() {
    let grids: Vec<TokenGrid> = (0..3).map(|i| TokenGrid::from_sequence(vec![i, i + 1, 2, 15], 2, 2).unwrap()).collect();
    let dump = TokenDump::from_grids(16, &grids).unwrap();
    let back = TokenDump::decode(&dump.encode()).unwrap();
    assert_eq!(back, dump);
    assert_eq!(back.grids(), grids);
    assert!(TokenDump::decode(&dump.encode()[..20]).is_err());
}

#[test]
fn corpus_builds_are_deterministic_and_guarded() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = CorpusConfig { seed: 7, classes: 4, train: 12, val: 4, side: 16 };
    let ma = corpus::build(a.path(), &cfg, false, 2).unwrap();
    let mb = corpus::build(b.path(), &cfg, false, 1).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(corpus::build(a.path(), &cfg, false, 1).unwrap(), ma);
    let other = CorpusConfig { seed: 8, ..cfg };
    assert!(matches!(corpus::build(a.path(), &other, false, 1), Err(Error::Refused(_))));
    let mc = corpus::build(a.path(), &other, true, 1).unwrap();
    assert_ne!(mc.checksum, ma.checksum);
    let loaded = corpus::load(a.path(), 1).unwrap();
    assert_eq!(loaded.train.len(), 12);
    assert_eq!(loaded.manifest, mc);
}
