use cmt_core::data::{make_task_targets, load_cohort, NoteType, Split, Task};
use cmt_core::synthgen::{generate_cohort, generate_stays, probe_data, SynthConfig};

/// Ordinary least squares with intercept via normal equations and
/// Gauss-Jordan elimination; returns in-sample R².
fn ols_r2(rows: &[(Vec<f64>, f64)]) -> f64 {
    let p = rows[0].0.len() + 1;
    let mut a = vec![vec![0.0; p + 1]; p];
    for (x, y) in rows {
        let mut xi = vec![1.0];
        xi.extend_from_slice(x);
        for i in 0..p {
            for j in 0..p {
                a[i][j] += xi[i] * xi[j];
            }
            a[i][p] += xi[i] * y;
        }
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        let d = a[c][c];
        for v in a[c].iter_mut() {
            *v /= d;
        }
        for r in 0..p {
            if r != c {
                let f = a[r][c];
                for k in 0..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..p).map(|i| a[i][p]).collect();
    let mean = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (x, y) in rows {
        let pred = beta[0] + x.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
        ss_res += (y - pred).powi(2);
        ss_tot += (y - mean).powi(2);
    }
    1.0 - ss_res / ss_tot
}

#[test]
fn ols_oracle_recovers_exact_line() {
    let rows: Vec<(Vec<f64>, f64)> = (0..20).map(|i| (vec![i as f64, (i * i) as f64], 3.0 + 2.0 * i as f64)).collect();
    assert!((ols_r2(&rows) - 1.0).abs() < 1e-9);
}

#[test]
fn same_seed_same_bytes() {
    let cfg = SynthConfig { n_train: 40, n_val: 30, n_test: 30, seed: 3, ..Default::default() };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_cohort(&cfg, a.path()).unwrap();
    generate_cohort(&cfg, b.path()).unwrap();
    let ma = std::fs::read(a.path().join("manifest.json")).unwrap();
    assert_eq!(ma, std::fs::read(b.path().join("manifest.json")).unwrap());
    for id in ["stay_00000", "stay_00017", "stay_00099"] {
        for f in ["ehr.cmt", "notes.jsonl", "outcome.json"] {
            let pa = std::fs::read(a.path().join(id).join(f)).unwrap();
            assert_eq!(pa, std::fs::read(b.path().join(id).join(f)).unwrap(), "{id}/{f}");
        }
    }
    let other = SynthConfig { seed: 4, ..cfg };
    let c = tempfile::tempdir().unwrap();
    generate_cohort(&other, c.path()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("stay_00000/ehr.cmt")).unwrap(),
        std::fs::read(c.path().join("stay_00000/ehr.cmt")).unwrap()
    );
}

#[test]
fn written_cohort_loads_and_lints() {
    let cfg = SynthConfig { n_train: 30, n_val: 8, n_test: 8, seed: 1, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    generate_cohort(&cfg, dir.path()).unwrap();
    let cohort = load_cohort(dir.path()).unwrap();
    assert!(cohort.rejected.is_empty(), "{:?}", cohort.rejected);
    assert_eq!(cohort.stays.len() + cohort.dropped_no_notes, 46);
    for (_, s) in &cohort.stays {
        assert!(s.lint().is_empty(), "{}: {:?}", s.stay_id, s.lint());
    }
    // date-only notes land at the end of their chart day
    let ecg = cohort.stays.iter().flat_map(|(_, s)| &s.notes).filter(|n| n.note_type == NoteType::Ecg).count();
    assert!(ecg > 0);
}

#[test]
fn default_prevalence_in_range() {
    let stays = generate_stays(&SynthConfig::default()).unwrap();
    for split in [Split::Train, Split::Val, Split::Test] {
        let (mut pos, mut tot) = (0usize, 0usize);
        for (_, s) in stays.iter().filter(|(sp, _)| *sp == split) {
            let t = make_task_targets(s, Task::Decomp);
            for (y, m) in t.targets.iter().zip(&t.mask) {
                if *m {
                    tot += 1;
                    pos += usize::from(*y > 0.5);
                }
            }
        }
        let rate = pos as f64 / tot as f64;
        eprintln!("{split:?} decomp prevalence {rate:.4} ({pos}/{tot})");
        assert!((0.01..=0.05).contains(&rate), "{split:?} prevalence {rate}");
    }
}

#[test]
fn probes_separate_views() {
    let d = probe_data(&SynthConfig::default()).unwrap();
    let note = ols_r2(&d.note_rows);
    let ehr = ols_r2(&d.ehr_rows);
    eprintln!("probe R2 notes {note:.3} ehr {ehr:.3}");
    assert!(note >= 0.8, "note probe {note}");
    assert!(ehr <= 0.5, "ehr probe {ehr}");
}

#[test]
fn prevalence_rises_as_threshold_falls() {
    let mut last = -1.0;
    for thr in [0.98, 0.9, 0.8, 0.7] {
        let cfg = SynthConfig { n_train: 150, n_val: 0, n_test: 0, death_threshold: thr, ..Default::default() };
        let (mut pos, mut tot) = (0usize, 0usize);
        for (_, s) in generate_stays(&cfg).unwrap() {
            let t = make_task_targets(&s, Task::Decomp);
            pos += t.targets.iter().zip(&t.mask).filter(|(y, m)| **m && **y > 0.5).count();
            tot += t.mask.iter().filter(|m| **m).count();
        }
        let rate = pos as f64 / tot as f64;
        assert!(rate >= last, "threshold {thr}: {rate} < {last}");
        last = rate;
    }
}
