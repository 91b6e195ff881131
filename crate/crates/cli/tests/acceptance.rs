//! Acceptance run. Prints one PASS/FAIL line per criterion and a summary.
//! Set `RRT_ACCEPTANCE_STRICT=1` to exit non-zero when any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrt_autograd::Tape;
use rrt_core::baselines::{alpha_qe_expand, aqe_search, ransac_homography, AqeConfig, GvConfig};
use rrt_core::descriptor::synth::{synth_generate, SynthConfig};
use rrt_core::descriptor::{decode_dataset, encode_dataset, l2_normalize};
use rrt_core::eval::{ap_at_k, average_precision, map_at_k, mean_average_precision, recall_at_k, GroundTruth};
use rrt_core::model::{
    bind, cls_logit, decode_checkpoint, encode, encode_checkpoint, pair_logit, param_count, score_pair,
};
use rrt_core::retrieval::{decode_index, encode_index, read_neighbors, rerank_topk, write_neighbors};
use rrt_core::trainer::{evaluate_loss, PairSample, TrainConfig, Trainer};
use rrt_core::{GlobalIndex, ImageRecord, LocalDescriptor, Method, ModelConfig, ModelParams, Neighbor, NeighborList};
use serde_json::Value;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cli(args: &[&str]) -> Result<(), String> {
    let argv = std::iter::once("rrt").chain(args.iter().copied());
    rrt_cli::run(argv).map_err(|e| format!("rrt {}: {e}", args.join(" ")))
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

// 1 ------------------------------------------------------------------------

fn architecture() -> Outcome {
    let expected = 6 * 329_856 + 262_272 + 129 + 256 + 512 + 896;
    let cfg = ModelConfig::default();
    let counted = param_count(&cfg);
    let built = ModelParams::<f32>::init(&cfg, 0).map_err(|e| e.to_string())?.num_params();
    check(expected == 2_243_201 && counted == expected && built == expected, || {
        format!("table {expected}, param_count {counted}, allocated {built}")
    })?;
    Ok(format!("{counted} parameters"))
}

// 2 ------------------------------------------------------------------------

fn bce_of(params: &ModelParams<f64>, a: &ImageRecord, b: &ImageRecord) -> f64 {
    let mut tape = Tape::new();
    let w = bind(&mut tape, params);
    let z = pair_logit(&mut tape, &w, &params.config, a, b).expect("valid pair");
    let l = tape.bce_with_logits(z, 1.0).expect("scalar");
    tape.value(l)[0]
}

fn gradient_check() -> Outcome {
    let data = synth_generate(&SynthConfig::small_test()).map_err(|e| e.to_string())?;
    let a = data.queries[0].normalized().unwrap().truncated(4);
    let b = data.gallery[1].normalized().unwrap().truncated(4);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for variant in 0..2 {
        let cfg = ModelConfig {
            use_pos_embed: variant == 1,
            mlp_residual: variant == 1,
            ..ModelConfig::tiny()
        };
        let mut params = ModelParams::<f64>::init(&cfg, 21 + variant).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(variant);
        params.weights.head.weight.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));

        let analytic: Vec<Vec<f64>> = {
            let mut tape = Tape::new();
            let w = bind(&mut tape, &params);
            let z = pair_logit(&mut tape, &w, &cfg, &a, &b).map_err(|e| e.to_string())?;
            let l = tape.bce_with_logits(z, 1.0).map_err(|e| e.to_string())?;
            let grads = tape.backward(l).map_err(|e| e.to_string())?;
            w.named().iter().map(|(_, v)| grads.get(**v).unwrap().to_vec()).collect()
        };
        let h = 1e-5;
        for (t, grad) in analytic.iter().enumerate() {
            for (i, &an) in grad.iter().enumerate() {
                let orig = params.tensors()[t].data()[i];
                params.tensors_mut()[t].data_mut()[i] = orig + h;
                let up = bce_of(&params, &a, &b);
                params.tensors_mut()[t].data_mut()[i] = orig - h;
                let down = bce_of(&params, &a, &b);
                params.tensors_mut()[t].data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    check(worst < 1e-4, || format!("worst relative error {worst:.3e}"))?;
    Ok(format!("{checked} entries, worst relative error {worst:.2e}"))
}

// 3 ------------------------------------------------------------------------

fn random_record(rng: &mut ChaCha8Rng, id: u32, cfg: &ModelConfig) -> ImageRecord {
    let unit = |rng: &mut ChaCha8Rng, n: usize| {
        let v: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        l2_normalize(&v).unwrap()
    };
    let n = rng.random_range(1..=8);
    ImageRecord {
        id,
        label: id,
        global: unit(rng, cfg.global_dim),
        locals: (0..n)
            .map(|_| LocalDescriptor {
                vec: unit(rng, cfg.dim),
                u: rng.random_range(0.0..640.0),
                v: rng.random_range(0.0..480.0),
                scale_index: rng.random_range(0..cfg.n_scales as u8),
            })
            .collect(),
    }
}

fn shuffled(rng: &mut ChaCha8Rng, r: &ImageRecord) -> ImageRecord {
    let mut out = r.clone();
    for i in (1..out.locals.len()).rev() {
        out.locals.swap(i, rng.random_range(0..=i));
    }
    out
}

fn invariance() -> Outcome {
    let cfg = ModelConfig {
        max_locals: 12,
        use_pos_embed: true,
        ..ModelConfig::tiny()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut pad_worst, mut perm_worst) = (0.0f64, 0.0f64);
    for pair in 0..50u32 {
        let mut params = ModelParams::<f32>::init(&cfg, pair as u64).map_err(|e| e.to_string())?;
        params.weights.head.weight.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        let a = random_record(&mut rng, 2 * pair, &cfg);
        let b = random_record(&mut rng, 2 * pair + 1, &cfg);
        let logit = |a: &ImageRecord, b: &ImageRecord, padded: bool| -> Result<f64, String> {
            let mut tape = Tape::new();
            let w = bind(&mut tape, &params);
            let (z, _) = encode(&mut tape, &w, &cfg, a, b, padded).map_err(|e| e.to_string())?;
            let l = cls_logit(&mut tape, &w, z).map_err(|e| e.to_string())?;
            Ok(tape.value(l)[0] as f64)
        };
        let base = logit(&a, &b, false)?;
        pad_worst = pad_worst.max((logit(&a, &b, true)? - base).abs());
        let (pa, pb) = (shuffled(&mut rng, &a), shuffled(&mut rng, &b));
        perm_worst = perm_worst.max((logit(&pa, &b, false)? - base).abs());
        perm_worst = perm_worst.max((logit(&a, &pb, false)? - base).abs());
        perm_worst = perm_worst.max((logit(&pa, &pb, true)? - base).abs());
    }
    check(pad_worst < 1e-5 && perm_worst < 1e-4, || {
        format!("padding {pad_worst:.2e}, permutation {perm_worst:.2e}")
    })?;
    Ok(format!("padding {pad_worst:.1e}, permutation {perm_worst:.1e}"))
}

// 4 ------------------------------------------------------------------------

fn overfit() -> Outcome {
    let mc = ModelConfig::tiny();
    let data = SynthConfig {
        n_instances: 16,
        gallery_per_instance: 2,
        queries_per_instance: 0,
        parts_per_instance: 4,
        parts_per_image: 4,
        locals_per_image: mc.max_locals,
        d_l: mc.dim as u16,
        d_g_raw: mc.global_dim as u32,
        confusion_pairs: 8,
        seed: 11,
        ..SynthConfig::small_test()
    };
    let records: Vec<ImageRecord> = synth_generate(&data)
        .map_err(|e| e.to_string())?
        .gallery
        .iter()
        .map(|r| r.normalized().unwrap())
        .collect();
    let of = |label: u32| -> Vec<usize> { (0..records.len()).filter(|&i| records[i].label == label).collect() };
    let mut pairs = Vec::new();
    for label in 0..16 {
        let (own, other) = (of(label), of(label ^ 1));
        pairs.push(PairSample { anchor: own[0], partner: own[1], label: 1 });
        pairs.push(PairSample { anchor: own[0], partner: other[1], label: 0 });
    }
    let mut params = ModelParams::<f32>::init(&mc, 0).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    let initial = evaluate_loss(&params, &records, &pairs).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(&params, &cfg);
    for _ in 0..500 {
        trainer.step(&mut params, &records, &pairs, cfg.lr).map_err(|e| e.to_string())?;
    }
    let last = evaluate_loss(&params, &records, &pairs).map_err(|e| e.to_string())?;
    let detail = format!(
        "{} pairs, lr {}, wd {}: initial BCE {initial:.4}, after 500 steps {last:.4}",
        pairs.len(),
        cfg.lr,
        cfg.weight_decay
    );
    check((initial - 2f64.ln()).abs() < 0.15 && last < 0.05, || detail.clone())?;
    Ok(detail)
}

// 5 and 9 ------------------------------------------------------------------

struct SeedRun {
    seed: u64,
    dir: PathBuf,
    global: f64,
    oracle: f64,
    rrt: f64,
    seconds: f64,
}

fn pipeline(root: &Path, seed: u64) -> Result<SeedRun, String> {
    let start = Instant::now();
    let dir = root.join(format!("seed{seed}"));
    let path = |name: &str| dir.join(name);
    let s = seed.to_string();
    let test = path("test");
    cli(&["synth", "--preset", "benchmark", "--seed", &s, "--out", p(&test)])?;
    cli(&["synth", "--preset", "benchmark-train", "--seed", &s, "--out", p(&path("train"))])?;
    cli(&["train", "--data", p(&path("train")), "--seed", &s, "--out", p(&path("model.ckpt"))])?;
    cli(&["index", "--data", p(&test), "--out", p(&path("global.idx"))])?;
    cli(&[
        "retrieve", "--data", p(&test), "--index", p(&path("global.idx")), "--k", "100",
        "--out", p(&path("global.jsonl")),
    ])?;
    cli(&[
        "rerank", "--data", p(&test), "--neighbors", p(&path("global.jsonl")), "--scorer", "rrt",
        "--checkpoint", p(&path("model.ckpt")), "--k", "100", "--out", p(&path("rrt.jsonl")),
    ])?;
    cli(&[
        "rerank", "--data", p(&test), "--neighbors", p(&path("global.jsonl")), "--scorer", "oracle",
        "--k", "100", "--out", p(&path("oracle.jsonl")),
    ])?;
    let mut maps = BTreeMap::new();
    for name in ["global", "rrt", "oracle"] {
        let report = path(&format!("{name}.json"));
        cli(&["eval", "--data", p(&test), "--neighbors", p(&path(&format!("{name}.jsonl"))), "--out", p(&report)])?;
        maps.insert(name, read_json(&report)?["map"].as_f64().ok_or("report without map")?);
    }
    let lists: Vec<String> = ["global", "rrt", "oracle"].iter().map(|n| p(&path(&format!("{n}.jsonl"))).to_string()).collect();
    cli(&["compare", "--data", p(&test), "--neighbors", &lists.join(","), "--out", p(&path("compare.txt"))])?;
    Ok(SeedRun {
        seed,
        global: maps["global"],
        oracle: maps["oracle"],
        rrt: maps["rrt"],
        seconds: start.elapsed().as_secs_f64(),
        dir,
    })
}

fn central_claim(runs: &[SeedRun]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for r in runs {
        let pass = r.global <= 0.75 && r.oracle >= 0.95 && r.rrt >= r.global + 0.15;
        ok &= pass;
        lines.push(format!(
            "seed {}: global {:.3}, rrt {:.3}, oracle {:.3} ({:.0} s)",
            r.seed, r.global, r.rrt, r.oracle, r.seconds
        ));
    }
    let total: f64 = runs.iter().map(|r| r.seconds).sum();
    ok &= total < 600.0 && runs.len() == 3;
    let detail = format!("{}; total {total:.0} s", lines.join("; "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn distinct_cells(r: &ImageRecord, stride: f64) -> usize {
    let cells: HashSet<(i64, i64)> = r
        .locals
        .iter()
        .map(|l| ((l.u as f64 / stride).floor() as i64, (l.v as f64 / stride).floor() as i64))
        .collect();
    cells.len()
}

fn ablation(run: &SeedRun) -> Outcome {
    let path = |name: &str| run.dir.join(name);
    let test = path("test");
    cli(&[
        "ablate", "--data", p(&test), "--neighbors", p(&path("global.jsonl")), "--scorer", "rrt",
        "--checkpoint", p(&path("model.ckpt")), "--out", p(&path("ablation.json")),
    ])?;
    let table = read_json(&path("ablation.json"))?;
    let rows = table["rows"].as_array().ok_or("no rows")?;
    let stride = table["grid_stride"].as_f64().ok_or("no stride")?;
    let load = |name: &str| decode_dataset(&std::fs::read(test.join(name)).unwrap()).unwrap().records;
    let images: Vec<ImageRecord> = load("queries.rrtd").into_iter().chain(load("gallery.rrtd")).collect();
    let mut by_count = BTreeMap::new();
    for row in rows {
        let c = row["locals"].as_u64().ok_or("bad row")? as usize;
        let recount = images.iter().map(|r| distinct_cells(&r.truncated(c), stride)).sum::<usize>() as f64
            / images.len() as f64;
        let got = row["mean_distinct_cells"].as_f64().ok_or("bad row")?;
        check(got == recount, || format!("c={c}: cells {got} vs recount {recount}"))?;
        by_count.insert(c, row["map"].as_f64().ok_or("bad row")?);
    }
    let l = *by_count.keys().last().ok_or("empty sweep")?;
    let (full, eighth) = (by_count[&l], by_count.get(&(l / 8)).copied().ok_or("no L/8 row")?);
    let curve: Vec<String> = by_count.iter().map(|(c, m)| format!("{c}:{m:.3}")).collect();
    check(full >= eighth - 0.02, || format!("mAP(L) {full:.3} < mAP(L/8) {eighth:.3} - 0.02"))?;
    Ok(format!("seed {} curve {}; cell counts match the recount", run.seed, curve.join(" ")))
}

// 6 ------------------------------------------------------------------------

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| {
            let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            l2_normalize(&v).unwrap()
        })
        .collect()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn project(h: &[[f64; 3]; 3], p: [f64; 2]) -> [f64; 2] {
    let r = |i: usize| h[i][0] * p[0] + h[i][1] * p[1] + h[i][2];
    [r(0) / r(2), r(1) / r(2)]
}

fn baselines() -> Outcome {
    let out = alpha_qe_expand(&[1.0, 0.0], &[(&[0.0, 1.0], 0.25)], 1, 0.5).map_err(|e| e.to_string())?;
    let want = [2.0 / 5f64.sqrt(), 1.0 / 5f64.sqrt()];
    check((out[0] as f64 - want[0]).abs() < 1e-6 && (out[1] as f64 - want[1]).abs() < 1e-6, || {
        format!("worked example gave {out:?}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let gallery = unit_rows(&mut rng, 200, 16);
    let ids: Vec<u32> = (0..200).collect();
    let index = GlobalIndex::from_vectors(ids.clone(), &gallery, false).map_err(|e| e.to_string())?;
    let cfg = AqeConfig { nqe: 2, alpha: 0.3 };
    let mut worst = 0.0f64;
    for (qi, q) in unit_rows(&mut rng, 10, 16).iter().enumerate() {
        let got = aqe_search(&index, 1000 + qi as u32, q, &cfg).map_err(|e| e.to_string())?;
        let rank = |v: &[f32]| {
            let mut s: Vec<(u32, f64)> = ids.iter().map(|&i| (i, dot(v, &gallery[i as usize]))).collect();
            s.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            s
        };
        let first = rank(q);
        let mut acc: Vec<f64> = q.iter().map(|&x| x as f64).collect();
        for &(id, sim) in &first[..2] {
            let w = sim.max(0.0).powf(0.3);
            for (a, &x) in acc.iter_mut().zip(&gallery[id as usize]) {
                *a += w * x as f64;
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expanded: Vec<f32> = acc.iter().map(|x| (x / norm) as f32).collect();
        let want = rank(&expanded);
        check(got.ids() == want.iter().map(|w| w.0).collect::<Vec<_>>(), || format!("query {qi}: order differs"))?;
        for (n, w) in got.neighbors.iter().zip(&want) {
            worst = worst.max((n.score - w.1).abs());
        }
    }
    check(worst < 1e-6, || format!("re-query scores differ by {worst:.2e}"))?;

    let h = [[0.95, 0.1, 30.0], [-0.07, 1.02, -20.0], [1.5e-4, -1e-4, 1.0]];
    let mut recovered = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for i in 0..100 {
            let a = [rng.random_range(0.0..800.0), rng.random_range(0.0..600.0)];
            let b = if i < 70 {
                let b = project(&h, a);
                [b[0] + rng.random_range(-0.5..0.5), b[1] + rng.random_range(-0.5..0.5)]
            } else {
                [rng.random_range(0.0..800.0), rng.random_range(0.0..600.0)]
            };
            src.push(a);
            dst.push(b);
        }
        let gv = GvConfig { iterations: 2000, threshold: 3.0, ratio: None, seed };
        let out = ransac_homography(&src, &dst, &gv);
        check(ransac_homography(&src, &dst, &gv) == out, || format!("seed {seed} not deterministic"))?;
        let found = out.mask[..70].iter().filter(|&&m| m).count();
        check(found * 100 >= 95 * 70, || format!("seed {seed}: {found}/70 inliers"))?;
        recovered.push(found);
    }
    let min = recovered.iter().min().unwrap();
    Ok(format!("AQE re-query max score diff {worst:.1e}; RANSAC kept at least {min}/70 planted inliers over 10 seeds"))
}

// 7 ------------------------------------------------------------------------

fn rerank_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bits = |v: &[Neighbor]| v.iter().map(|n| (n.id, n.score.to_bits())).collect::<Vec<_>>();
    for _ in 0..1000 {
        let n = rng.random_range(0..16);
        let mut ids: Vec<u32> = (0..n as u32).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.random_range(0..=i));
        }
        let list = NeighborList {
            query: 500,
            method: Method::Global,
            neighbors: ids
                .iter()
                .enumerate()
                .map(|(r, &id)| Neighbor { id, score: 1.0 - r as f64 / 17.0 })
                .collect(),
            truncated: false,
        };
        let relevant: HashSet<u32> = ids.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
        let oracle = |id: u32| Ok::<f64, ()>(relevant.contains(&id) as u8 as f64);

        let same = rerank_topk(&list, 0, Method::Oracle, oracle).unwrap();
        check(same == list, || "K=0 changed the list".into())?;

        let full = rerank_topk(&list, n, Method::Oracle, oracle).unwrap();
        let (mut want, misses): (Vec<u32>, Vec<u32>) = ids.iter().partition(|id| relevant.contains(id));
        want.extend(misses);
        check(full.ids() == want, || format!("oracle order {:?} vs {want:?}", full.ids()))?;

        let k = rng.random_range(0..=n + 2);
        let scores: Vec<f64> = (0..16).map(|_| rng.random_range(0..4) as f64).collect();
        let got = rerank_topk(&list, k, Method::Rrt, |id| Ok::<f64, ()>(scores[id as usize])).unwrap();
        let kk = k.min(n);
        let mut head: Vec<Neighbor> = list.neighbors[..kk]
            .iter()
            .map(|nb| Neighbor { id: nb.id, score: scores[nb.id as usize] })
            .collect();
        for i in 1..head.len() {
            let mut j = i;
            while j > 0 && head[j - 1].score < head[j].score {
                head.swap(j - 1, j);
                j -= 1;
            }
        }
        check(bits(&got.neighbors[..kk]) == bits(&head), || "prefix differs from a stable sort".into())?;
        check(bits(&got.neighbors[kk..]) == bits(&list.neighbors[kk..]), || "suffix changed".into())?;
    }
    Ok("1000 random lists".into())
}

// 8 ------------------------------------------------------------------------

fn brute_ap(ranked: &[u32], rel: &HashSet<u32>, norm: usize) -> f64 {
    let mut hits = 0;
    let mut total = 0.0;
    for (i, id) in ranked.iter().enumerate() {
        if rel.contains(id) {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    total / norm as f64
}

fn metric_oracle() -> Outcome {
    let rel: HashSet<u32> = [1, 2].into();
    let five_sixths = average_precision(&[1, 9, 2], &rel).unwrap();
    check((five_sixths - 5.0 / 6.0).abs() < 1e-12, || format!("worked example {five_sixths}"))?;
    check(ap_at_k(&[1, 9, 2], &rel, 3) == Some(five_sixths), || "truncated AP at full depth".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut instances = 0;
    while instances < 100 {
        let gallery: Vec<(u32, u32)> = (0..rng.random_range(5..40)).map(|i| (i, rng.random_range(0..6))).collect();
        let queries: Vec<(u32, u32)> = (0..rng.random_range(1..8)).map(|i| (1000 + i, rng.random_range(0..7))).collect();
        let gt = GroundTruth::from_labels(queries.iter().copied(), gallery.iter().copied());
        let mut lists = Vec::new();
        let mut relevant = Vec::new();
        for &(q, label) in &queries {
            let mut ids: Vec<u32> = gallery.iter().map(|g| g.0).collect();
            for i in (1..ids.len()).rev() {
                ids.swap(i, rng.random_range(0..=i));
            }
            ids.truncate(rng.random_range(0..=ids.len()));
            lists.push(NeighborList {
                query: q,
                method: Method::Global,
                neighbors: ids.iter().map(|&id| Neighbor { id, score: 0.0 }).collect(),
                truncated: false,
            });
            relevant.push(gallery.iter().filter(|g| g.1 == label).map(|g| g.0).collect::<HashSet<u32>>());
        }
        let evaluable: Vec<usize> = (0..lists.len()).filter(|&i| !relevant[i].is_empty()).collect();
        if evaluable.is_empty() {
            continue;
        }
        instances += 1;
        let mean = |f: &dyn Fn(usize) -> f64| evaluable.iter().map(|&i| f(i)).sum::<f64>() / evaluable.len() as f64;
        let (map, _) = mean_average_precision(&lists, &gt).map_err(|e| e.to_string())?;
        worst = worst.max((map - mean(&|i| brute_ap(&lists[i].ids(), &relevant[i], relevant[i].len()))).abs());
        for k in [1, 3, 10, 100] {
            let got = map_at_k(&lists, &gt, k).map_err(|e| e.to_string())?;
            let want = mean(&|i| {
                let ids = lists[i].ids();
                brute_ap(&ids[..k.min(ids.len())], &relevant[i], relevant[i].len().min(k))
            });
            worst = worst.max((got - want).abs());
        }
        let ks = [1, 5, 10];
        let recall = recall_at_k(&lists, &gt, &ks).map_err(|e| e.to_string())?;
        for k in ks {
            let want = mean(&|i| lists[i].ids().iter().take(k).any(|id| relevant[i].contains(id)) as u8 as f64);
            worst = worst.max((recall[&k] - want).abs());
        }
    }
    check(worst < 1e-10, || format!("max difference {worst:.2e}"))?;
    Ok(format!("100 instances, max difference {worst:.1e}"))
}

// 10 -----------------------------------------------------------------------

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files_under(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn small_pipeline(dir: &Path) -> Result<(), String> {
    let path = |name: &str| dir.join(name);
    let data = path("data");
    let d = p(&data);
    cli(&["synth", "--preset", "small", "--seed", "5", "--out", d])?;
    cli(&["index", "--data", d, "--out", p(&path("global.idx"))])?;
    cli(&["retrieve", "--data", d, "--index", p(&path("global.idx")), "--k", "10", "--out", p(&path("global.jsonl"))])?;
    cli(&["train", "--data", d, "--preset", "tiny", "--epochs", "3", "--seed", "5", "--out", p(&path("m.ckpt"))])?;
    cli(&["index", "--data", d, "--checkpoint", p(&path("m.ckpt")), "--out", p(&path("proj.idx"))])?;
    cli(&[
        "retrieve", "--data", d, "--index", p(&path("proj.idx")), "--checkpoint", p(&path("m.ckpt")),
        "--k", "10", "--out", p(&path("proj.jsonl")),
    ])?;
    let global = path("global.jsonl");
    let mut lists = Vec::new();
    for scorer in ["rrt", "gv", "aqe", "aqe+rrt", "oracle"] {
        let out = path(&format!("{scorer}.jsonl"));
        cli(&[
            "rerank", "--data", d, "--neighbors", p(&global), "--scorer", scorer, "--checkpoint",
            p(&path("m.ckpt")), "--k", "5", "--out", p(&out),
        ])?;
        cli(&["eval", "--data", d, "--neighbors", p(&out), "--out", p(&path(&format!("{scorer}.csv")))])?;
        lists.push(p(&out).to_string());
    }
    cli(&["compare", "--data", d, "--neighbors", &lists.join(","), "--out", p(&path("compare.txt"))])?;
    cli(&[
        "ablate", "--data", d, "--neighbors", p(&global), "--checkpoint", p(&path("m.ckpt")),
        "--out", p(&path("ablation.json")),
    ])?;
    cli(&[
        "correspond", "--data", d, "--checkpoint", p(&path("m.ckpt")), "--query-id", "0", "--gallery-id", "1",
        "--out", p(&path("pairs.json")),
    ])
}

fn determinism(root: &Path) -> Outcome {
    let (a, b) = (root.join("a"), root.join("b"));
    small_pipeline(&a)?;
    small_pipeline(&b)?;
    let (fa, fb) = (files_under(&a), files_under(&b));
    check(fa.len() == fb.len(), || "different file sets".into())?;
    // Files that name other files carry the run directory; swap it before comparing.
    let relocate = |bytes: Vec<u8>| match String::from_utf8(bytes) {
        Ok(text) => text.replace(p(&a), p(&b)).into_bytes(),
        Err(e) => e.into_bytes(),
    };
    for (x, y) in fa.iter().zip(&fb) {
        check(x.strip_prefix(&a).ok() == y.strip_prefix(&b).ok(), || format!("{} has no twin", x.display()))?;
        let (bx, by) = (std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        check(relocate(bx) == by, || format!("{} differs", x.display()))?;
    }

    for name in ["queries.rrtd", "gallery.rrtd", "parts.rrtd"] {
        let bytes = std::fs::read(a.join("data").join(name)).unwrap();
        let again = encode_dataset(&decode_dataset(&bytes).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        check(again == bytes, || format!("{name} round trip"))?;
    }
    let bytes = std::fs::read(a.join("m.ckpt")).unwrap();
    let params: ModelParams<f32> = decode_checkpoint(&bytes).map_err(|e| e.to_string())?;
    check(encode_checkpoint(&params).map_err(|e| e.to_string())? == bytes, || "checkpoint round trip".into())?;
    let wide: ModelParams<f64> = decode_checkpoint(&bytes).map_err(|e| e.to_string())?;
    check(wide.cast::<f32>() == params, || "f64 view of the checkpoint is lossy".into())?;
    let records = decode_dataset(&std::fs::read(a.join("data/gallery.rrtd")).unwrap()).unwrap().records;
    let cap = params.config.max_locals;
    let (x, y) = (records[0].normalized().unwrap().truncated(cap), records[1].normalized().unwrap().truncated(cap));
    let (s1, s2) = (score_pair(&params, &x, &y).unwrap(), score_pair(&params, &x, &y).unwrap());
    check(s1.logit.to_bits() == s2.logit.to_bits(), || "scoring is not repeatable".into())?;
    for name in ["global.idx", "proj.idx"] {
        let bytes = std::fs::read(a.join(name)).unwrap();
        check(encode_index(&decode_index(&bytes).map_err(|e| e.to_string())?) == bytes, || format!("{name} round trip"))?;
    }
    for name in ["global.jsonl", "rrt.jsonl", "aqe.jsonl"] {
        let bytes = std::fs::read(a.join(name)).unwrap();
        let lists = read_neighbors(bytes.as_slice()).map_err(|e| e.to_string())?;
        let mut again = Vec::new();
        write_neighbors(&lists, &mut again).map_err(|e| e.to_string())?;
        check(again == bytes, || format!("{name} round trip"))?;
    }
    Ok(format!("{} files identical across runs; dataset, checkpoint, index and list round trips exact", fa.len()))
}

fn report(n: usize, name: &str, start: Instant, outcome: Outcome) -> bool {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("criterion {n:>2} PASS {name}: {detail} [{secs:.1} s]");
            true
        }
        Err(detail) => {
            println!("criterion {n:>2} FAIL {name}: {detail} [{secs:.1} s]");
            false
        }
    }
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let mut passed = Vec::new();
    let t = Instant::now();
    passed.push(report(1, "architecture", t, architecture()));
    let t = Instant::now();
    passed.push(report(2, "gradient integrity", t, gradient_check()));
    let t = Instant::now();
    passed.push(report(3, "padding and permutation invariance", t, invariance()));
    let t = Instant::now();
    passed.push(report(4, "overfit sanity", t, overfit()));

    let t = Instant::now();
    let runs: Result<Vec<SeedRun>, String> = [1, 2, 3].iter().map(|&s| pipeline(root.path(), s)).collect();
    let ablation_run = match &runs {
        Ok(runs) => {
            passed.push(report(5, "central claim", t, central_claim(runs)));
            runs.first()
        }
        Err(e) => {
            passed.push(report(5, "central claim", t, Err(e.clone())));
            None
        }
    };
    let t = Instant::now();
    passed.push(report(6, "baseline correctness", t, baselines()));
    let t = Instant::now();
    passed.push(report(7, "rerank contract", t, rerank_contract()));
    let t = Instant::now();
    passed.push(report(8, "metric oracle", t, metric_oracle()));
    let t = Instant::now();
    let outcome = match ablation_run {
        Some(run) => ablation(run),
        None => Err("benchmark pipeline did not run".into()),
    };
    passed.push(report(9, "ablation trend", t, outcome));
    let t = Instant::now();
    passed.push(report(10, "determinism and persistence", t, determinism(root.path())));
    let n = passed.iter().filter(|&&p| p).count();
    println!("acceptance: {n}/{} criteria passed", passed.len());
    let strict = std::env::var("RRT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && n < passed.len() {
        std::process::exit(1);
    }
}
