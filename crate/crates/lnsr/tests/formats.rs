use std::fs;

use lnsr::experiments::load_tsv;
use lnsr::formats::{load_checkpoint, load_knn_snapshot, save_checkpoint, save_knn_snapshot};
use lnsr::lnsr_core::data::LabelKind;
use lnsr::lnsr_core::encoder::{EncoderConfig, EncoderModel};
use lnsr::lnsr_core::manifold::NeighborIndex;
use lnsr::lnsr_core::Tensor;
use lnsr::Error;

fn small_model() -> EncoderModel {
    let cfg = EncoderConfig {
        vocab_size: 11,
        embed_dim: 4,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 5,
        max_seq_len: 6,
        num_outputs: 3,
        dropout_rate: 0.1,
        pre_norm: true,
    };
    EncoderModel::new(cfg, 4).unwrap()
}

#[test]
fn checkpoint_round_trips_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = small_model();
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(back.params(), model.params());
    let tokens = [2, 5, 9];
    assert_eq!(back.forward(&tokens).unwrap(), model.forward(&tokens).unwrap());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&small_model(), &path).unwrap();
    let bytes = fs::read(&path).unwrap();

    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));

    let mut longer = bytes.clone();
    longer.push(0);
    fs::write(&path, &longer).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));

    let mut renamed = bytes.clone();
    renamed[0] = b'X';
    fs::write(&path, &renamed).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
}

#[test]
fn knn_snapshot_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("idx.knn");
    let data: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
    let index = NeighborIndex::build(Tensor::new(vec![10, 3], data).unwrap()).unwrap();
    save_knn_snapshot(&index, &path).unwrap();
    let back = load_knn_snapshot(&path).unwrap();
    assert_eq!(back.vectors(), index.vectors());
    let q = [0.1, -0.2, 0.3];
    let a: Vec<usize> = index.knn(&q, 4, false).unwrap().iter().map(|n| n.index).collect();
    let b: Vec<usize> = back.knn(&q, 4, false).unwrap().iter().map(|n| n.index).collect();
    assert_eq!(a, b);
}

#[test]
fn tsv_files_load_with_a_shared_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.tsv");
    let dev = dir.path().join("dev.tsv");
    fs::write(&train, "1\ta b a\n0\tb c\n").unwrap();
    fs::write(&dev, "0\tc z\n").unwrap();
    let tr = load_tsv(&train, LabelKind::Class, None, 8).unwrap();
    assert_eq!(tr.len(), 2);
    assert_eq!(tr.examples[0].tokens, vec![2, 3, 2]);
    assert_eq!(tr.vocab.len(), 5);
    let dv = load_tsv(&dev, LabelKind::Class, Some(&tr.vocab), 8).unwrap();
    assert_eq!(dv.examples[0].tokens, vec![4, 1]);
    assert_eq!(load_tsv(&train, LabelKind::Class, None, 8).unwrap(), tr);

    fs::write(&train, "1\ta\nx\tb\n").unwrap();
    let err = load_tsv(&train, LabelKind::Class, None, 8).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    assert!(err.is_validation());
    fs::write(&train, "").unwrap();
    assert!(load_tsv(&train, LabelKind::Class, None, 8).is_err());
}
