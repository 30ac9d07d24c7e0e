use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwf::analyze::*;
use rwf::rwf_core::attention::{attn_distance, AttnRecord, Branch};
use rwf::rwf_core::network::{ModelConfig, ModelState};
use rwf::rwf_core::Tensor;

fn desk_record() -> (AttnRecord, (usize, usize)) {
    let state = ModelState::init(ModelConfig::desk(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = Tensor::from_fn(&[3, 20, 24], |_| rng.random_range(0.0..1.0));
    record_attention(&state, &img).unwrap()
}

#[test]
fn desk_model_report_covers_every_head() {
    let (rec, (h, w)) = desk_record();
    assert_eq!((h, w), (32, 32));
    let rep = distance_report(&rec, h, w).unwrap();
    assert_eq!(rep.rows.len(), rec.entries.len());
    assert!(rep.rows.iter().any(|r| r.branch == Branch::Routed.name()));
    assert!(rep.rows.iter().any(|r| r.branch == Branch::Shifted.name()));
    assert!(rep.rows.iter().all(|r| (0.0..=1.0).contains(&r.distance)));
    let mean = rep.rows.iter().map(|r| r.distance).sum::<f64>() / rep.rows.len() as f64;
    assert!((mean - rep.aggregate).abs() < 1e-15);
}

#[test]
fn csv_roundtrip_is_exact() {
    let (rec, (h, w)) = desk_record();
    let rep = distance_report(&rec, h, w).unwrap();
    let mut buf = Vec::new();
    write_csv(&rep, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("scale,block,branch,head,distance\n"));
    assert!(text.lines().last().unwrap().starts_with("ALL,ALL,ALL,ALL,"));
    assert_eq!(read_csv(&buf[..]).unwrap(), rep);
}

#[test]
fn csv_without_aggregate_or_with_bad_header_is_rejected() {
    assert!(read_csv(&b"scale,block,branch,head,distance\n0,b,routed,0,0.5\n"[..]).is_err());
    assert!(read_csv(&b"a,b\n1,2\n"[..]).is_err());
    assert!(read_csv(&b"scale,block,branch,head,distance\n0,b,routed,x,0.5\nALL,ALL,ALL,ALL,1\n"[..]).is_err());
}

#[test]
fn transposing_every_position_keeps_the_distance() {
    let (rec, (h, w)) = desk_record();
    let mut t = rec.clone();
    for e in &mut t.entries {
        for p in e.query_pos.iter_mut().chain(e.key_pos.iter_mut()) {
            *p = (p.1, p.0);
        }
    }
    let a = attn_distance(&rec, h, w).unwrap();
    let b = attn_distance(&t, w, h).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn file_roundtrip() {
    let (rec, (h, w)) = desk_record();
    let rep = distance_report(&rec, h, w).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    save_csv(&rep, &p).unwrap();
    assert_eq!(load_csv(&p).unwrap(), rep);
}
