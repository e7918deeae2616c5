//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail. Pass criterion numbers as arguments to run a subset,
//! e.g. `cargo test --release --test acceptance -- 2 5`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use couple_sed::cli::experiment::{ablation1_variants, ablation2_variants, voi_variants, AblationReport, Runner};
use couple_sed::cli::ExperimentConfig;
use couple_sed::crnn::{self, CrnnConfig, CrnnParams, ForwardOptions};
use couple_sed::dataio::{
    self, compose_epoch, parse_strong, parse_weak, write_strong, write_weak, EventLabel, Provenance, Split,
    StrongLabels, SynthConfig, VoiMode, WeakLabels,
};
use couple_sed::evalkit::{self, CollarParams};
use couple_sed::features::{self, FeatureConfig, FeatureMatrix};
use couple_sed::losses::{self, ClipTarget};
use couple_sed::numkit::{grad_check, Tensor};
use couple_sed::plg::PseudoLabelSet;
use couple_sed::teacher::{
    ema_update, objective_and_gradient, train_step, BatchItem, MeanTeacherState, PseudoKinds, TrainConfig,
    TrainData,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.1}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

fn random_features(rng: &mut ChaCha8Rng, n_frames: usize, n_mels: usize) -> FeatureMatrix {
    FeatureMatrix {
        n_frames,
        n_mels,
        data: (0..n_frames * n_mels).map(|_| rng.random_range(-1.0..1.0)).collect(),
        frame_duration: 0.0625,
    }
}

fn bits(v: f64) -> u64 {
    v.to_bits()
}

// ---------------------------------------------------------------- 1

fn footer_only(reports: &[&AblationReport]) -> Outcome {
    const REFERENCE: [&str; 9] = ["28.14", "32.39", "30.04", "33.93", "30.06", "32.15", "32.42", "33.52", "44.25"];
    let mut bad = Vec::new();
    for r in reports {
        let csv = r.to_csv();
        for line in csv.lines() {
            let is_footer = line.starts_with('#');
            let has_ref = REFERENCE.iter().any(|n| line.contains(n));
            if has_ref && !is_footer {
                bad.push(line.to_string());
            }
        }
    }
    let footers_present = reports.iter().take(2).all(|r| r.to_csv().lines().any(|l| l.starts_with('#') && l.contains("32.39")));
    outcome(bad.is_empty() && footers_present, format!("{} data rows quote reference numbers; footers present: {footers_present}", bad.len()))
}

// ---------------------------------------------------------------- 2

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = CrnnConfig::desk(16, 4);
    let student = crnn::init_params(&cfg, 11).unwrap();
    let teacher = crnn::init_params(&cfg, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let feats: Vec<FeatureMatrix> = (0..5).map(|_| random_features(&mut rng, 8, 16)).collect();
    let n_out = cfg.output_frames(8);
    let mut bin = |n: usize| Tensor::from_vec((0..n).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect());
    let strong = |t: Tensor| t.reshape(vec![n_out, 4]).unwrap();
    let targets = vec![
        ClipTarget { strong: Some(strong(bin(n_out * 4))), weak: None, provenance: Provenance::Real, split: Split::Strong },
        ClipTarget { strong: None, weak: Some(bin(4)), provenance: Provenance::Real, split: Split::Weak },
        ClipTarget { strong: Some(strong(bin(n_out * 4))), weak: None, provenance: Provenance::Pseudo, split: Split::Weak },
        ClipTarget { strong: Some(strong(bin(n_out * 4))), weak: Some(bin(4)), provenance: Provenance::Pseudo, split: Split::Unlabeled },
        ClipTarget::unlabeled(),
    ];
    let batch: Vec<BatchItem> =
        feats.iter().zip(&targets).map(|(features, target)| BatchItem { features, target }).collect();
    let teacher_preds: Vec<_> =
        feats.iter().enumerate().map(|(i, f)| crnn::forward(&teacher, f, 0.1, i as u64).unwrap()).collect();
    let opts = |_: usize| ForwardOptions::default();
    let loss_fn = |ts: &[Tensor]| {
        let p = CrnnParams::from_tensors(cfg.clone(), ts.to_vec()).expect("params");
        let (loss, grads) = objective_and_gradient(&p, &batch, Some(&teacher_preds), &opts, 0.6, 0.7).expect("objective");
        Ok((loss.total, grads))
    };
    let params: Vec<Tensor> = student.tensors().into_iter().cloned().collect();
    let report = grad_check(loss_fn, &params, 1e-5).unwrap();
    let (fast, time) = within(start, Duration::from_secs(120));
    outcome(
        report.max_rel_error <= 1e-4 && fast,
        format!("max rel error {:.2e} over {} entries, {time}", report.max_rel_error, report.checked),
    )
}

// ---------------------------------------------------------------- 3

fn ema_closed_form() -> Outcome {
    let cfg = CrnnConfig::desk(16, 4);
    let mut worst: f64 = 0.0;
    for &alpha in &[0.999, 0.9, 0.5] {
        for &k in &[1u32, 7, 100] {
            let t0 = crnn::init_params(&cfg, 1).unwrap();
            let s = crnn::init_params(&cfg, 2).unwrap();
            let mut state = MeanTeacherState::new(t0.clone());
            state.student = s.clone();
            for _ in 0..k {
                ema_update(&mut state, alpha).unwrap();
            }
            let ak = alpha.powi(k as i32);
            for ((t, a), b) in state.teacher.tensors().iter().zip(t0.tensors()).zip(s.tensors()) {
                for ((&tv, &av), &bv) in t.data().iter().zip(a.data()).zip(b.data()) {
                    worst = worst.max((tv - (ak * av + (1.0 - ak) * bv)).abs());
                }
            }
        }
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.2e}"))
}

// ---------------------------------------------------------------- 4

fn small_synth() -> SynthConfig {
    SynthConfig { n_strong: 12, n_weak: 12, n_unlabeled: 36, n_validation: 4, seed: 5, ..SynthConfig::default() }
}

fn desk_features() -> FeatureConfig {
    FeatureConfig { sample_rate: 16_000, n_fft: 1024, hop: 1000, n_mels: 16, ..FeatureConfig::default() }
}

fn consistency_zero_and_bit_match() -> Outcome {
    let fcfg = desk_features();
    let synth = dataio::synth_dataset(&small_synth()).unwrap();
    let ds = &synth.dataset;
    let feats: Vec<FeatureMatrix> = ds.clips.iter().map(|c| features::log_mel(&c.samples, &fcfg).unwrap()).collect();
    let model = CrnnConfig { pool_sizes: vec![[1, 2], [2, 2]], ..CrnnConfig::desk(16, ds.classes.len()) };

    // (0, 0) when teacher == student and no noise.
    let params = crnn::init_params(&model, 3).unwrap();
    let state = MeanTeacherState::new(params);
    let s: Vec<_> = feats.iter().map(|f| crnn::forward(&state.student, f, 0.0, 0).unwrap()).collect();
    let t: Vec<_> = feats.iter().map(|f| crnn::forward(&state.teacher, f, 0.0, 9).unwrap()).collect();
    let (j2s, j2w) = losses::consistency_cost(&s, &t).unwrap();
    let zero = j2s.abs() <= 1e-12 && j2w.abs() <= 1e-12;

    // pseudo_weight 0: training with UPS+UPW pseudo labels against pure Mean Teacher.
    let mut pseudo = PseudoLabelSet::default();
    for c in ds.clips_in(Split::Unlabeled) {
        let events = synth.truth.get(&c.id).cloned().unwrap_or_default();
        pseudo.upw.insert(c.id.clone(), events.iter().map(|e| e.class_name.clone()).collect());
        pseudo.ups.insert(c.id.clone(), events);
    }
    let kinds = PseudoKinds { upw: true, ups: true, wps: false };
    let cfg = TrainConfig {
        batch_size: 12,
        pseudo_weight: 0.0,
        ema_alpha: 0.99,
        noise_std: 0.3,
        ramp_len: Some(8),
        learning_rate: 0.05,
        seed: 4,
        ..TrainConfig::default()
    };
    let mt = TrainData::build(ds, &feats, &model, None, PseudoKinds::default(), true).unwrap();
    let cl = TrainData::build(ds, &feats, &model, Some(&pseudo), kinds, true).unwrap();
    let n_pseudo = cl.items.iter().filter(|i| i.target.provenance == Provenance::Pseudo).count();
    let init = crnn::init_params(&model, 8).unwrap();
    let (mut a, mut b) = (MeanTeacherState::new(init.clone()), MeanTeacherState::new(init));
    let mut steps = 0;
    let mut mismatch = None;
    'outer: for epoch in 0..3 {
        let (ba, bb) = (mt.epoch_batches(&cfg, epoch).unwrap(), cl.epoch_batches(&cfg, epoch).unwrap());
        if ba != bb {
            mismatch = Some(format!("batch streams differ in epoch {epoch}"));
            break;
        }
        for idx in &ba {
            let la = train_step(&mut a, &mt.batch(idx), &cfg).unwrap();
            let lb = train_step(&mut b, &cl.batch(idx), &cfg).unwrap();
            steps += 1;
            let same = [
                (la.j1_real, lb.j1_real),
                (la.j2_strong, lb.j2_strong),
                (la.j2_weak, lb.j2_weak),
                (la.total, lb.total),
            ]
            .iter()
            .all(|&(x, y)| bits(x) == bits(y));
            if !same {
                mismatch = Some(format!("loss differs at step {steps}: {la:?} vs {lb:?}"));
                break 'outer;
            }
        }
    }
    let params_equal = a
        .student
        .tensors()
        .iter()
        .zip(b.student.tensors())
        .all(|(x, y)| x.data().iter().zip(y.data()).all(|(p, q)| bits(*p) == bits(*q)));
    let pass = zero && mismatch.is_none() && params_equal && n_pseudo > 0;
    outcome(
        pass,
        format!(
            "consistency ({j2s:.1e}, {j2w:.1e}); {steps} steps with {n_pseudo} pseudo items, {}; final params bit-equal: {params_equal}",
            mismatch.unwrap_or_else(|| "losses bit-equal".into())
        ),
    )
}

// ---------------------------------------------------------------- 5

fn oracle_eligible(c: &CollarParams, r: &EventLabel, e: &EventLabel) -> bool {
    let ref_len = r.offset - r.onset;
    let offset_tol = if c.offset_ratio * ref_len > c.offset_collar { c.offset_ratio * ref_len } else { c.offset_collar };
    (e.onset - r.onset).abs() <= c.onset_collar && (e.offset - r.offset).abs() <= offset_tol
}

/// Largest injective assignment by exhaustive search.
fn brute_max(refs: &[EventLabel], ests: &[EventLabel], c: &CollarParams) -> usize {
    fn go(i: usize, used: &mut Vec<bool>, refs: &[EventLabel], ests: &[EventLabel], c: &CollarParams) -> usize {
        if i == refs.len() {
            return 0;
        }
        let mut best = go(i + 1, used, refs, ests, c);
        for j in 0..ests.len() {
            if !used[j] && oracle_eligible(c, &refs[i], &ests[j]) {
                used[j] = true;
                best = best.max(1 + go(i + 1, used, refs, ests, c));
                used[j] = false;
            }
        }
        best
    }
    go(0, &mut vec![false; ests.len()], refs, ests, c)
}

fn random_events(rng: &mut ChaCha8Rng, n: usize, classes: &[String]) -> Vec<EventLabel> {
    (0..n)
        .map(|_| {
            // Coarse grid so collar boundaries are hit often.
            let on = rng.random_range(0..30) as f64 * 0.05;
            let len = rng.random_range(1..20) as f64 * 0.05;
            EventLabel::new(on, on + len, classes[rng.random_range(0..classes.len())].clone())
        })
        .collect()
}

/// Estimates near the references (grid jitter up to 0.3 s) mixed with
/// unrelated ones, so conflicting candidate pairs are common.
fn jittered_events(rng: &mut ChaCha8Rng, refs: &[EventLabel], n: usize, classes: &[String]) -> Vec<EventLabel> {
    (0..n)
        .map(|_| match refs.is_empty() || rng.random_bool(0.3) {
            true => random_events(rng, 1, classes).remove(0),
            false => {
                let r = &refs[rng.random_range(0..refs.len())];
                let on = (r.onset + rng.random_range(-6i32..=6) as f64 * 0.05).max(0.0);
                let off = (r.offset + rng.random_range(-6i32..=6) as f64 * 0.05).max(on + 0.05);
                EventLabel::new(on, off, r.class_name.clone())
            }
        })
        .collect()
}

fn eb_f1_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut failures = 0;
    let mut total_tp = 0;
    for _ in 0..200 {
        let n_classes = rng.random_range(1..=3);
        let classes: Vec<String> = (0..n_classes).map(|k| format!("c{k}")).collect();
        let collar = CollarParams {
            onset_collar: rng.random_range(0..=8) as f64 * 0.05,
            offset_collar: rng.random_range(0..=8) as f64 * 0.05,
            offset_ratio: rng.random_range(0..=4) as f64 * 0.1,
            greedy: false,
        };
        let n_ref = rng.random_range(0..=6);
        let n_est = rng.random_range(0..=6);
        let refs = random_events(&mut rng, n_ref, &classes);
        let ests = jittered_events(&mut rng, &refs, n_est, &classes);

        let mut counts = vec![(0usize, 0usize, 0usize); n_classes];
        let mut ok = true;
        for (k, name) in classes.iter().enumerate() {
            let r: Vec<EventLabel> = refs.iter().filter(|e| &e.class_name == name).cloned().collect();
            let e: Vec<EventLabel> = ests.iter().filter(|e| &e.class_name == name).cloned().collect();
            let oracle = brute_max(&r, &e, &collar);
            let pairs = evalkit::match_events(&r, &e, &collar);
            let injective = {
                let mut es: Vec<usize> = pairs.iter().map(|p| p.1).collect();
                es.sort_unstable();
                es.dedup();
                es.len() == pairs.len()
            };
            let valid = pairs.iter().all(|&(i, j)| oracle_eligible(&collar, &r[i], &e[j]));
            ok &= pairs.len() == oracle && injective && valid;
            counts[k] = (oracle, e.len() - oracle, r.len() - oracle);
            total_tp += oracle;
        }
        let f1s: Vec<f64> = counts
            .iter()
            .filter(|c| c.0 + c.1 + c.2 > 0)
            .map(|&(tp, fp, fn_)| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
            .collect();
        let expected = if f1s.is_empty() { 0.0 } else { f1s.iter().sum::<f64>() / f1s.len() as f64 };
        let reference: StrongLabels = BTreeMap::from([("clip".to_string(), refs)]);
        let estimated: StrongLabels = BTreeMap::from([("clip".to_string(), ests)]);
        let report = evalkit::eb_f1(&reference, &estimated, &collar, &classes).unwrap();
        ok &= report.macro_f1 == expected;
        ok &= report.per_class.iter().zip(&counts).all(|(c, &(tp, fp, fn_))| c.tp == tp && c.fp == fp && c.fn_ == fn_);
        if !ok {
            failures += 1;
        }
    }
    let (fast, time) = within(start, Duration::from_secs(60));
    outcome(failures == 0 && fast, format!("{failures}/200 mismatches ({total_tp} oracle matches), {time}"))
}

// ---------------------------------------------------------------- 6-8

fn desk_config() -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ExperimentConfig::parse(&text).unwrap()
}

fn median(r: &AblationReport, name: &str) -> f64 {
    r.median_of(name).unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------- 9

fn plumbing() -> Outcome {
    let cfg = FeatureConfig { sample_rate: 16_000, n_fft: 2048, hop: 255, ..FeatureConfig::default() };
    let frames = cfg.frame_count(160_000);
    let stft = features::stft_mag(&vec![0.0; 160_000], &cfg).map(|m| m.len()).unwrap_or(0);
    let frames_ok = frames == Some(620) && stft == 620;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let classes = ["dog", "alarm", "speech_x"];
    let mut label_fail = 0;
    for _ in 0..1000 {
        let mut strong = StrongLabels::new();
        let mut weak = WeakLabels::new();
        for c in 0..rng.random_range(0..5) {
            let id = format!("clip_{c}.wav");
            let mut events: Vec<EventLabel> = (0..rng.random_range(0..4))
                .map(|_| {
                    // Millisecond grid, the resolution the writer keeps.
                    let on_ms = rng.random_range(0..9000u32);
                    let off_ms = on_ms + rng.random_range(1..1000u32);
                    EventLabel::new(f64::from(on_ms) / 1000.0, f64::from(off_ms) / 1000.0, classes[rng.random_range(0..3)])
                })
                .collect();
            events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.class_name.cmp(&b.class_name)));
            weak.insert(id.clone(), events.iter().map(|e| e.class_name.clone()).collect());
            strong.insert(id, events);
        }
        let s2 = parse_strong(&write_strong(&strong, Some("round trip")), "mem").unwrap();
        let w2 = parse_weak(&write_weak(&weak, None), "mem").unwrap();
        if s2 != strong || w2 != weak || write_strong(&s2, Some("round trip")) != write_strong(&strong, Some("round trip")) {
            label_fail += 1;
        }
    }

    let mut compose_fail = 0;
    for case in 0..1000u64 {
        let n = rng.random_range(1..60);
        let prov: Vec<Provenance> =
            (0..n).map(|_| if rng.random_bool(0.4) { Provenance::Pseudo } else { Provenance::Real }).collect();
        let bs = rng.random_range(1..10);
        for mode in VoiMode::ALL {
            let batches = compose_epoch(&prov, mode, bs, case).unwrap();
            let flat: Vec<usize> = batches.iter().flatten().copied().collect();
            let mut sorted = flat.clone();
            sorted.sort_unstable();
            let perm = sorted == (0..n).collect::<Vec<_>>();
            let sizes = batches.iter().rev().skip(1).all(|b| b.len() == bs) && batches.last().is_none_or(|b| !b.is_empty() && b.len() <= bs);
            let order = |first: Provenance| {
                let k = flat.iter().take_while(|&&i| prov[i] == first).count();
                flat[k..].iter().all(|&i| prov[i] != first)
            };
            let ordered = match mode {
                VoiMode::RealFirst => order(Provenance::Real),
                VoiMode::PseudoFirst => order(Provenance::Pseudo),
                VoiMode::Random => true,
            };
            if !(perm && sizes && ordered) {
                compose_fail += 1;
            }
        }
    }
    outcome(
        frames_ok && label_fail == 0 && compose_fail == 0,
        format!("frames {frames:?} (stft {stft}); label round-trip failures {label_fail}/1000; compose failures {compose_fail}/3000"),
    )
}

// ---------------------------------------------------------------- 10

fn overfit() -> Outcome {
    let start = Instant::now();
    let desk = desk_config();
    let synth = dataio::synth_dataset(&SynthConfig { n_weak: 1, n_unlabeled: 1, n_validation: 1, ..desk.synth.clone() }).unwrap();
    let ds = &synth.dataset;
    let feats: Vec<FeatureMatrix> =
        ds.clips.iter().map(|c| features::log_mel(&c.samples, &desk.features).unwrap()).collect();
    let model = desk.model.crnn(desk.features.n_mels, ds.classes.len());
    let data = TrainData::build(ds, &feats, &model, None, PseudoKinds::default(), false).unwrap();
    let strong: Vec<usize> = (0..data.items.len())
        .filter(|&i| data.items[i].target.split == Split::Strong)
        .take(desk.train.batch_size)
        .collect();
    let batch = data.batch(&strong);
    let cfg = TrainConfig { learning_rate: 0.01, max_consistency_weight: 0.0, noise_std: 0.0, ..desk.train.clone() };
    let mut state = MeanTeacherState::new(crnn::init_params(&model, 0).unwrap());
    let mut first = f64::NAN;
    let mut last = f64::NAN;
    for step in 0..300 {
        let l = train_step(&mut state, &batch, &cfg).unwrap();
        if step == 0 {
            first = l.j1_real;
        }
        last = l.j1_real;
    }
    let (fast, time) = within(start, Duration::from_secs(120));
    outcome(last < 0.05 && fast, format!("j1_real {first:.3} -> {last:.4} over 300 steps on {} clips, {time}", batch.len()))
}

// ---------------------------------------------------------------- main

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };

    if want(2) {
        record(2, "gradient check on the full objective", gradient_check());
    }
    if want(3) {
        record(3, "EMA closed form", ema_closed_form());
    }
    if want(4) {
        record(4, "consistency zero case and pseudo_weight 0 bit-match", consistency_zero_and_bit_match());
    }
    if want(5) {
        record(5, "EB-F1 brute-force oracle", eb_f1_oracle());
    }
    if want(9) {
        record(9, "frame count, label round trips, compose properties", plumbing());
    }
    if want(10) {
        record(10, "overfit one strong batch", overfit());
    }
    if [1, 6, 7, 8].iter().any(|&n| want(n)) {
        let cfg = desk_config();
        let start = Instant::now();
        let mut runner = Runner::new(&cfg, None).unwrap();
        let seeds = cfg.seeds.clone();
        let a1 = runner.report("ablation1", &ablation1_variants(), &seeds, couple_sed::cli::experiment::ablation1_footer()).unwrap();
        let a2 = runner.report("ablation2", &ablation2_variants(), &seeds, couple_sed::cli::experiment::ablation2_footer()).unwrap();
        let voi = runner.report("voi", &voi_variants(), &seeds, couple_sed::cli::experiment::voi_footer()).unwrap();
        print!("{}\n{}\n{}", a1.to_table(), a2.to_table(), voi.to_table());
        let elapsed = start.elapsed().as_secs_f64() / 60.0;
        if want(1) {
            record(1, "reference numbers only in report footers", footer_only(&[&a1, &a2, &voi]));
        }
        let n_seeds = seeds.len();
        if want(6) {
            let (c, m, p) = (median(&a1, "CRNN"), median(&a1, "CRNN+MT"), median(&a1, "CRNN+MT+PLG"));
            record(
                6,
                "CRNN+MT+PLG > CRNN+MT > CRNN",
                outcome(p > m && m > c && n_seeds == 5 && cfg.train.epochs <= 40, format!("medians {c:.2} < {m:.2} < {p:.2} over {n_seeds} seeds, {} epochs, all trend runs {elapsed:.1} min", cfg.train.epochs)),
            );
        }
        if want(7) {
            let (b, full) = (median(&a2, "baseline"), median(&a2, "+UPS+WPS+UPW"));
            record(7, "+UPS+WPS+UPW >= baseline", outcome(full >= b && n_seeds == 5, format!("medians {full:.2} vs {b:.2}")));
        }
        if want(8) {
            let (rf, pf, rnd) = (median(&voi, "RF"), median(&voi, "PF"), median(&voi, "random"));
            record(8, "random >= max(RF, PF) - 1", outcome(rnd >= rf.max(pf) - 1.0 && n_seeds == 5, format!("random {rnd:.2}, RF {rf:.2}, PF {pf:.2}")));
        }
    }

    results.sort_by_key(|r| r.0);
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("{} criteria run, {} failed {:?}", results.len(), failed.len(), failed);
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
