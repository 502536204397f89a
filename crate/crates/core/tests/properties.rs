//! Property suites over the numeric pipeline and persistence layer.

use std::collections::BTreeMap;

use proptest::prelude::*;
use wattmon_core::analytics::{self, CorrelationPair};
use wattmon_core::carbon::{IntensityKind, IntensityRecord, IntensitySource};
use wattmon_core::model::{resolve_selection, DeviceId, SamplingConfig, Tick, CATALOG};
use wattmon_core::persistence::{read_session, SessionMeta, SessionWriter};
use wattmon_core::processing;

fn intensity(value: f64) -> IntensityRecord {
    IntensityRecord {
        value,
        kind: IntensityKind::Marginal,
        zone: "prop".into(),
        valid_at_ms: 0,
        source: IntensitySource::Static,
    }
}

proptest! {
    #[test]
    fn selection_resolution_is_idempotent(indices in proptest::collection::vec(0usize..26, 1..10)) {
        let expr = indices.iter().map(|i| CATALOG[*i].id).collect::<Vec<_>>().join(",");
        let once = resolve_selection(&expr).unwrap();
        let again = resolve_selection(&once.join(",")).unwrap();
        prop_assert_eq!(once, again);
    }

    #[test]
    fn pearson_is_symmetric_and_affine_invariant(
        xs in proptest::collection::vec(-1e3f64..1e3, 3..40),
        ys in proptest::collection::vec(-1e3f64..1e3, 3..40),
        a in 0.1f64..50.0,
        b in -100.0f64..100.0,
    ) {
        let n = xs.len().min(ys.len());
        let x: Vec<Option<f64>> = xs[..n].iter().map(|v| Some(*v)).collect();
        let y: Vec<Option<f64>> = ys[..n].iter().map(|v| Some(*v)).collect();
        let xy = analytics::pearson(&x, &y);
        let yx = analytics::pearson(&y, &x);
        match (xy, yx) {
            (Some(r1), Some(r2)) => {
                prop_assert!((r1 - r2).abs() < 1e-12);
                // positive affine transform of either side preserves r
                let x_t: Vec<Option<f64>> = x.iter().map(|v| v.map(|v| a * v + b)).collect();
                let rt = analytics::pearson(&x_t, &y).unwrap();
                prop_assert!((r1 - rt).abs() < 1e-9, "affine drift: {r1} vs {rt}");
            }
            (None, None) => {}
            other => prop_assert!(false, "asymmetric definedness: {:?}", other),
        }
    }

    #[test]
    fn integrate_constant_power_is_exact(
        power in 0.0f64..2000.0,
        step_ms in 10u32..5000,
        points in 2usize..200,
    ) {
        let step = step_ms as f64 / 1000.0;
        let series: Vec<(f64, f64)> = (0..points).map(|k| (k as f64 * step, power)).collect();
        let joules = processing::integrate_energy(&series).unwrap();
        let duration = (points - 1) as f64 * step;
        let expected = power * duration;
        prop_assert!((joules - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn counter_to_power_then_integrate_recovers_delta(
        start_j in 0.0f64..1e6,
        deltas in proptest::collection::vec(0.01f64..50.0, 2..60),
        step_ms in 50i64..2000,
    ) {
        // build a monotone joule counter, convert to watts, integrate back
        let mut counter = vec![(start_j, 0i64)];
        for (i, d) in deltas.iter().enumerate() {
            let (prev_j, _) = counter[i];
            counter.push((prev_j + d, (i as i64 + 1) * step_ms));
        }
        let mut watts = Vec::new();
        for pair in counter.windows(2) {
            let w = processing::counter_to_power(pair[0], pair[1], None).unwrap().unwrap();
            let mid_t = pair[1].1 as f64 / 1000.0;
            watts.push((mid_t, w));
        }
        // rectangle integration over per-interval average power is exact;
        // reconstruct it from the trapezoid-compatible series by summing
        let mut recovered = 0.0;
        let mut prev_t = 0.0;
        for (t, w) in &watts {
            recovered += w * (t - prev_t);
            prev_t = *t;
        }
        let expected: f64 = deltas.iter().sum();
        prop_assert!((recovered - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn carbon_scales_linearly_and_by_intensity_ratio(
        energy in 0.0f64..1e8,
        scale in 0.0f64..20.0,
        i1 in 1.0f64..2000.0,
        i2 in 1.0f64..2000.0,
    ) {
        let r1 = intensity(i1);
        let r2 = intensity(i2);
        let base = processing::estimate_carbon(energy, &r1);
        let scaled = processing::estimate_carbon(scale * energy, &r1);
        prop_assert!((scaled - scale * base).abs() <= 1e-12 * base.abs().max(scaled.abs()).max(1e-30));

        if energy > 0.0 {
            let ratio = processing::estimate_carbon(energy, &r1) / processing::estimate_carbon(energy, &r2);
            prop_assert!((ratio - i1 / i2).abs() <= 1e-12 * (i1 / i2));
        }
    }

    #[test]
    fn top_pairs_matches_exhaustive_enumeration(
        coeffs in proptest::collection::vec(-1.0f64..1.0, 0..45),
        k in 1usize..8,
    ) {
        // build an upper-triangle matrix over up to 10 synthetic metrics
        let mut matrix = Vec::new();
        let mut idx = 0;
        'outer: for i in 0..10u32 {
            for j in (i + 1)..10u32 {
                if idx >= coeffs.len() {
                    break 'outer;
                }
                matrix.push(CorrelationPair {
                    device_a: DeviceId::Gpu(0),
                    metric_a: format!("m{i}"),
                    device_b: DeviceId::Gpu(0),
                    metric_b: format!("m{j}"),
                    coefficient: coeffs[idx],
                });
                idx += 1;
            }
        }
        let (pos, neg) = analytics::top_pairs(&matrix, k);

        // brute force: sort all positives desc / negatives asc
        let mut all_pos: Vec<f64> = matrix.iter().map(|p| p.coefficient).filter(|c| *c > 0.0).collect();
        let mut all_neg: Vec<f64> = matrix.iter().map(|p| p.coefficient).filter(|c| *c < 0.0).collect();
        all_pos.sort_by(|a, b| b.partial_cmp(a).unwrap());
        all_neg.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all_pos.truncate(k);
        all_neg.truncate(k);
        prop_assert_eq!(pos.iter().map(|p| p.coefficient).collect::<Vec<_>>(), all_pos);
        prop_assert_eq!(neg.iter().map(|p| p.coefficient).collect::<Vec<_>>(), all_neg);
    }
}

// Randomized persistence round-trips: arbitrary selections, devices, and
// absence patterns must come back value- and absence-exact.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn persistence_round_trip_identity(
        metric_indices in proptest::collection::btree_set(0usize..26, 1..12),
        gpu_count in 0u32..3,
        rows in proptest::collection::vec(
            (proptest::collection::vec(proptest::option::of(-1e9f64..1e9), 1..30),),
            2..25
        ),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let selection = metric_indices
            .iter()
            .map(|i| CATALOG[*i].id)
            .collect::<Vec<_>>()
            .join(",");
        let mut config = SamplingConfig::new(0.1, &selection, dir.path()).unwrap();
        let mut devices = vec![DeviceId::Host];
        devices.extend((0..gpu_count).map(DeviceId::Gpu));
        config.devices = devices;
        let meta = SessionMeta::new("20240101T000000Z-prop".into(), 1000, config);
        let keys = meta.series_keys();
        prop_assume!(!keys.is_empty());

        let mut writer = SessionWriter::create(&meta).unwrap();
        let mut ticks = Vec::new();
        for (i, (cells,)) in rows.iter().enumerate() {
            let mut values = BTreeMap::new();
            for (j, key) in keys.iter().enumerate() {
                if let Some(Some(v)) = cells.get(j % cells.len().max(1)).map(|c| c.map(|v| v)) {
                    // vary by column so patterns differ
                    values.insert(key.clone(), v + j as f64);
                }
            }
            let tick = Tick {
                wall_time_ms: 1000 + i as i64 * 100,
                mono_elapsed_s: (i + 1) as f64 * 0.1,
                values,
            };
            writer.append_tick(&tick).unwrap();
            ticks.push(tick);
        }
        writer.finalize(&meta).unwrap();

        let (session, report) = read_session(&writer.layout().root).unwrap();
        prop_assert_eq!(report.skipped_rows, 0);
        prop_assert_eq!(session.ticks, ticks);
    }
}

#[test]
fn replay_of_generated_trace_matches_at_timestamps() {
    use wattmon_core::sources::{generate_synthetic, SyntheticPhase, SyntheticTraceSpec};

    let spec = SyntheticTraceSpec {
        phases: vec![SyntheticPhase {
            duration_s: 3.0,
            levels: [("power_draw_w".to_string(), 250.0), ("sm_active_pct".to_string(), 70.0)].into(),
            noise: [("power_draw_w".to_string(), 25.0)].into(),
        }],
        seed: 1234,
    };
    let ticks = generate_synthetic(&spec, 0.1).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut config = SamplingConfig::new(0.1, "all", dir.path()).unwrap();
    config.devices = vec![DeviceId::Host, DeviceId::Gpu(0)];
    let meta = SessionMeta::new("20240101T000000Z-rep0".into(), 0, config);
    let mut writer = SessionWriter::create(&meta).unwrap();
    for tick in &ticks {
        writer.append_tick(tick).unwrap();
    }
    writer.finalize(&meta).unwrap();

    let (session, _) = read_session(&writer.layout().root).unwrap();
    let replayed = wattmon_core::sources::resample_ticks(&session, 0.1);
    assert_eq!(replayed, ticks);
}

#[test]
fn compute_totals_carbon_only_adds_metadata() {
    // identical energy results with and without an intensity record
    let spec = wattmon_core::sources::SyntheticTraceSpec::constant(
        5.0,
        &[("power_draw_w", 200.0), ("cpu_power_w", 100.0), ("dram_power_w", 10.0)],
    );
    let ticks = wattmon_core::sources::generate_synthetic(&spec, 0.1).unwrap();
    let mut config = SamplingConfig::new(0.1, "all", "/tmp/unused").unwrap();
    config.devices = vec![DeviceId::Host, DeviceId::Gpu(0)];
    let session = wattmon_core::SessionData {
        id: "carbon-meta".into(),
        config,
        device_inventory: BTreeMap::new(),
        ticks,
        overrun_count: 0,
        dropped_tick_count: 0,
        uncollected: vec![],
        dead_sources: vec![],
        started_wall_ms: 0,
        ended_wall_ms: None,
        cadence: Default::default(),
        totals: None,
    };
    let without = processing::compute_totals(&session, None).unwrap();
    let with = processing::compute_totals(&session, Some(&intensity(475.0))).unwrap();
    assert_eq!(without.total_energy_j, with.total_energy_j);
    assert_eq!(without.cpu_energy_j, with.cpu_energy_j);
    assert!(without.carbon_kg.is_none());
    assert!(with.carbon_kg.is_some());
}
