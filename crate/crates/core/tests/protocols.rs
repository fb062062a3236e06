use splitsim::data::{gen_blobs, gen_synth_images, partition_iid, Dataset, Partition};
use splitsim::nn::{LossKind, ModelSpec, Parameters};
use splitsim::protocol::{
    run_centralized, run_fedavg, run_protocol, run_sl_sequential, run_splitfed, sensitivity_sweep, split_model,
    MessageKind, Protocol, SplitSpec, SweepGrid, TrainConfig,
};
use splitsim::tensor::Tensor;

fn blobs_split() -> SplitSpec {
    let m = ModelSpec::mlp(&[6, 12, 8], 3, LossKind::SoftmaxCrossEntropy).unwrap();
    split_model(&m, 2).unwrap()
}

fn cfg(epochs: usize, batch: usize, seed: u64) -> TrainConfig {
    let mut c = TrainConfig {
        epochs,
        batch_size: batch,
        seed,
        keep_trajectory: true,
        ..Default::default()
    };
    c.adam.learning_rate = 1e-2;
    c
}

fn max_diff(a: &[Parameters], b: &[Parameters]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max)
}

#[test]
fn single_client_protocols_follow_one_trajectory() {
    let split = blobs_split();
    let train = gen_blobs(3, 6, 30, 0.8, 1).unwrap();
    let test = gen_blobs(3, 6, 10, 0.8, 2).unwrap();
    let whole = Partition::whole(train.len());
    let c = cfg(3, 16, 9);
    let central = run_centralized(&split.model, &train, &test, &c).unwrap();
    for p in [Protocol::Fedavg, Protocol::SlSequential, Protocol::Splitfed] {
        let r = run_protocol(p, &split, &train, &whole, &test, &c).unwrap();
        assert_eq!(r.trajectory.len(), 3);
        let d = max_diff(&central.trajectory, &r.trajectory);
        assert!(d <= 1e-12, "{p}: {d}");
    }
}

#[test]
fn single_client_equivalence_holds_through_batch_norm() {
    let model = ModelSpec::image_conv(1, 20, 3).unwrap();
    let split = split_model(&model, ModelSpec::IMAGE_CUT).unwrap();
    let train = resized(gen_synth_images(3, 1, 8, 0.5, 1).unwrap(), 20);
    let test = resized(gen_synth_images(3, 1, 4, 0.5, 2).unwrap(), 20);
    let whole = Partition::whole(train.len());
    let c = cfg(2, 10, 4);
    let central = run_centralized(&model, &train, &test, &c).unwrap();
    let sl = run_sl_sequential(&split, &train, &whole, &test, &c).unwrap();
    let sf = run_splitfed(&split, &train, &whole, &test, &c).unwrap();
    assert!(max_diff(&central.trajectory, &sl.trajectory) <= 1e-10);
    assert_eq!(sl.trajectory, sf.trajectory);
}

/// Crops the centre `side x side` window of every image.
fn resized(d: Dataset, side: usize) -> Dataset {
    let s = d.features.shape().to_vec();
    let (n, ch, full) = (s[0], s[1], s[2]);
    let off = (full - side) / 2;
    let mut out = Vec::with_capacity(n * ch * side * side);
    for i in 0..n {
        let row = d.features.row(i);
        for c in 0..ch {
            for y in 0..side {
                let start = c * full * full + (y + off) * full + off;
                out.extend_from_slice(&row[start..start + side]);
            }
        }
    }
    let f = Tensor::new(vec![n, ch, side, side], out).unwrap();
    Dataset::new(f, d.labels, d.classes, d.name).unwrap()
}

#[test]
fn identical_clients_average_to_any_one_of_them() {
    let split = blobs_split();
    let base = gen_blobs(3, 6, 6, 0.8, 3).unwrap();
    let n = base.len();
    let idx: Vec<usize> = (0..3 * n).map(|i| i % n).collect();
    let tripled = base.subset(&idx).unwrap();
    let shards = (0..3).map(|c| (c * n..(c + 1) * n).collect()).collect();
    let p = Partition::from_shards(shards, 3 * n).unwrap();
    // one full batch per client makes the shuffle order irrelevant
    let c = cfg(2, n, 5);
    let fed = run_fedavg(&split.model, &tripled, &p, &base, &c).unwrap();
    let solo = run_centralized(&split.model, &base, &base, &c).unwrap();
    let d = fed.final_params.max_abs_diff(&solo.final_params);
    assert!(d <= 1e-12, "{d}");
}

#[test]
fn splitfed_idles_exhausted_clients() {
    let split = blobs_split();
    let train = gen_blobs(3, 6, 10, 0.8, 4).unwrap();
    let test = gen_blobs(3, 6, 4, 0.8, 5).unwrap();
    let p = partition_iid(train.len(), 3, Some(&[10, 4, 7]), 1).unwrap();
    let r = run_splitfed(&split, &train, &p, &test, &cfg(2, 3, 1)).unwrap();
    // 4 steps; clients active for 4, 2 and 3 of them
    let batches = 4 + 2 + 3;
    for e in &r.epochs {
        assert_eq!(e.messages, 4 * batches);
        assert_eq!(e.by_kind["smashed"].messages, batches);
        assert_eq!(e.by_kind["global-params"].messages, batches);
    }
    let steps: std::collections::BTreeSet<usize> = r.log.messages().iter().map(|m| m.step).collect();
    assert_eq!(steps.len(), 4);
    let last_step: Vec<_> = r.log.messages().iter().filter(|m| m.epoch == 1 && m.step == 3).collect();
    assert!(last_step.iter().all(|m| m.sender.to_string() == "client-0" || m.receiver.to_string() == "client-0"));
}

#[test]
fn serial_and_parallel_runs_are_bit_identical() {
    let split = blobs_split();
    let train = gen_blobs(3, 6, 20, 0.8, 6).unwrap();
    let test = gen_blobs(3, 6, 5, 0.8, 7).unwrap();
    let p = partition_iid(train.len(), 4, None, 2).unwrap();
    for proto in Protocol::ALL {
        let serial = cfg(2, 5, 3);
        let parallel = TrainConfig { parallel: true, ..serial.clone() };
        let a = run_protocol(proto, &split, &train, &p, &test, &serial).unwrap();
        let b = run_protocol(proto, &split, &train, &p, &test, &parallel).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap(), "{proto}");
        assert_eq!(a.final_params, b.final_params);
    }
}

#[test]
fn report_bytes_match_the_log() {
    let split = blobs_split();
    let train = gen_blobs(3, 6, 20, 0.8, 6).unwrap();
    let test = gen_blobs(3, 6, 5, 0.8, 7).unwrap();
    let p = partition_iid(train.len(), 3, None, 2).unwrap();
    for proto in Protocol::ALL {
        let r = run_protocol(proto, &split, &train, &p, &test, &cfg(2, 7, 3)).unwrap();
        assert_eq!(r.epochs.len(), 2);
        assert_eq!(r.transcript.total.bytes, r.log.total_bytes());
        assert_eq!(r.epochs.last().unwrap().cumulative_bytes, r.log.total_bytes());
        assert!(r.log.messages().iter().all(|m| m.bytes == 8 * m.elements as u64 + 32));
        let smashed = r.log.messages().iter().filter(|m| m.kind == MessageKind::Smashed);
        assert!(smashed.clone().all(|m| m.elements % split.smashed_dim == 0));
        if proto == Protocol::Centralized {
            assert_eq!(r.log.len(), 0);
        }
    }
}

#[test]
fn report_json_round_trips_and_csv_has_one_row_per_epoch() {
    let split = blobs_split();
    let train = gen_blobs(3, 6, 10, 0.8, 6).unwrap();
    let r = run_sl_sequential(&split, &train, &Partition::whole(train.len()), &train, &cfg(3, 8, 1)).unwrap();
    let json = r.to_json().unwrap();
    let back = splitsim::protocol::TrainReport::from_json(&json).unwrap();
    assert_eq!(back.to_json().unwrap(), json);
    let csv = r.to_csv().unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 1 + 3);
    assert!(lines[0].starts_with("epoch,train_loss,accuracy"));
}

#[test]
fn sweep_shapes_and_self_difference() {
    let split = blobs_split();
    let train = gen_blobs(3, 6, 40, 0.8, 8).unwrap();
    let test = gen_blobs(3, 6, 10, 0.8, 9).unwrap();
    let c = cfg(1, 8, 2);
    let grid = SweepGrid {
        clients: vec![2],
        samples_per_client: vec![12],
    };
    let s = sensitivity_sweep([Protocol::Splitfed, Protocol::Splitfed], &split, &train, &test, &grid, "accuracy", &c)
        .unwrap();
    assert_eq!(s.difference, vec![vec![0.0]]);
    // a 1x1 sweep is one direct run with the cell's seed and partition
    let seed = splitsim::protocol::cell_seed(c.seed, 0, 0);
    let p = partition_iid(train.len(), 2, Some(&[12, 12]), seed).unwrap();
    let direct = run_splitfed(&split, &train, &p, &test, &TrainConfig { seed, ..c.clone() }).unwrap();
    assert_eq!(s.first[0][0], direct.final_metrics().accuracy);
    let csv = s.matrix_csv(&s.first).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(sensitivity_sweep(
        [Protocol::Fedavg, Protocol::Splitfed],
        &split,
        &train,
        &test,
        &SweepGrid { clients: vec![], samples_per_client: vec![1] },
        "accuracy",
        &c
    )
    .is_err());
}

#[test]
fn sweep_improves_with_more_samples_per_client() {
    let m = ModelSpec::mlp(&[10, 16], 3, LossKind::SoftmaxCrossEntropy).unwrap();
    let split = split_model(&m, 1).unwrap();
    let grid = SweepGrid {
        clients: vec![2, 4],
        samples_per_client: vec![5, 60],
    };
    let mut c = cfg(8, 8, 0);
    c.adam.learning_rate = 2e-2;
    let mut means = vec![[0.0; 2]; 2];
    let seeds = 3;
    for seed in 0..seeds {
        let train = gen_blobs(3, 10, 100, 0.8, 100 + seed).unwrap();
        let test = gen_blobs(3, 10, 50, 0.8, 200 + seed).unwrap();
        let cs = TrainConfig { seed, ..c.clone() };
        let s = sensitivity_sweep([Protocol::Fedavg, Protocol::Splitfed], &split, &train, &test, &grid, "accuracy", &cs)
            .unwrap();
        for (r, row) in s.second.iter().enumerate() {
            for (col, v) in row.iter().enumerate() {
                means[r][col] += v / seeds as f64;
            }
        }
    }
    for row in &means {
        assert!(row[1] + 0.02 >= row[0], "{means:?}");
    }
}
