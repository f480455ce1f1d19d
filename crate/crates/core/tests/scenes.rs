use tilewise::detectors::OracleNoiseModel;
use tilewise::multiscale::{run_ensemble, EnsembleConfig, ScaleProfile};
use tilewise::pipeline::{run_pipeline, DetectionContext, DetectorBinding, PipelineOptions};
use tilewise::stitcher::stitch;
use tilewise::synth::{generate_scene, ObjectSpec, SceneSpec};
use tilewise::tiler::{extract_tiles, TileSpec};
use tilewise::{iou, BoundingBox, ClassTable, Detection, Frame, GroundTruthLabel, RasterImage};

fn sorted_boxes(mut v: Vec<(usize, BoundingBox)>) -> Vec<(usize, BoundingBox)> {
    v.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.lex_cmp(&b.1)));
    v
}

#[test]
fn noiseless_oracle_reproduces_ground_truth_on_random_scenes() {
    let classes = ClassTable::default_overhead();
    for seed in 0..6 {
        let spec = SceneSpec {
            name: format!("scene{seed}"),
            width_px: Some(900 + 137 * seed as usize),
            height_px: Some(700 + 211 * seed as usize),
            seed,
            bands: 1,
            objects: vec![
                ObjectSpec { class: "car".into(), count: 120, size_m: 3.0 },
                ObjectSpec { class: "boat".into(), count: 30, size_m: 9.0 },
                ObjectSpec { class: "airplane".into(), count: 10, size_m: 18.0 },
            ],
            ..Default::default()
        };
        let (image, gt) = generate_scene(&spec, &classes).unwrap();
        for simulate_2x in [false, true] {
            // exact recovery needs every object narrower than the tile overlap:
            // 62 px natively, 31 px on the half-window 2x path
            let gt: Vec<_> = gt.iter().filter(|g| !simulate_2x || g.bbox.width() <= 31.0).copied().collect();
            let ctx = DetectionContext::new(classes.clone()).with_ground_truth(gt.clone());
            let opts = PipelineOptions { simulate_2x, ..Default::default() };
            let out = run_pipeline(&image, &DetectorBinding::default(), &opts, &ctx).unwrap();
            let got = sorted_boxes(out.detections.detections.iter().map(|d| (d.class_id, d.bbox)).collect());
            let want = sorted_boxes(gt.iter().map(|g| (g.class_id, g.bbox)).collect());
            assert_eq!(got, want, "seed {seed}, 2x {simulate_2x}");
            assert!(out.detections.detections.iter().all(|d| d.confidence == 1.0));
        }
    }
}

#[test]
fn object_in_overlap_strip_is_reported_once() {
    // tiles at columns 0 and 353 of a 769 px wide image share columns 353..416
    let image = RasterImage::filled("strip", 769, 416, 1, 0, 0.3).unwrap();
    let spec = TileSpec::default();
    let tiles = extract_tiles(&image, &spec).unwrap();
    assert_eq!(tiles.len(), 2);
    let object = BoundingBox::new(370.0, 100.0, 400.0, 130.0).unwrap();
    let per_tile: Vec<_> = tiles
        .iter()
        .zip([0.95, 0.90])
        .map(|(t, conf)| {
            let local = object.translate(-(t.placement.col as f64), 0.0);
            (t.placement.clone(), vec![Detection::new(2, local, conf, Frame::TileLocal(t.id()))])
        })
        .collect();
    let merged = stitch(&per_tile, 0.5).unwrap();
    assert_eq!(merged.len(), 1);
    assert_eq!(merged.detections[0].confidence, 0.95);
    assert_eq!(merged.detections[0].bbox, object);
}

#[test]
fn ensemble_routes_small_and_large_objects_to_their_profiles() {
    let classes = ClassTable::default_overhead();
    let (car, airport) = (classes.id_of("car").unwrap(), classes.id_of("airport").unwrap());
    let image = RasterImage::filled("mixed", 6000, 6000, 1, 60, 0.3).unwrap();
    let mut gt: Vec<GroundTruthLabel> = (0..100)
        .map(|i| {
            let (x, y) = (((i * 613) % 5900) as f64, ((i * 389) % 5900) as f64);
            GroundTruthLabel { class_id: car, bbox: BoundingBox::new(x, y, x + 10.0, y + 10.0).unwrap() }
        })
        .collect();
    gt.push(GroundTruthLabel { class_id: airport, bbox: BoundingBox::new(500.0, 700.0, 5500.0, 4700.0).unwrap() });

    let oracle = DetectorBinding::Oracle(OracleNoiseModel::noiseless());
    let cfg = EnsembleConfig::new(vec![
        ScaleProfile { name: "vehicles".into(), window_m: 124.8, window_px: 416, classes: vec![0, 1, car], detector: oracle.clone() },
        ScaleProfile { name: "airports".into(), window_m: 5000.0, window_px: 416, classes: vec![airport], detector: oracle },
    ]);
    let ctx = DetectionContext::new(classes).with_ground_truth(gt.clone());
    let out = run_ensemble(&image, &cfg, &TileSpec::default(), false, &ctx).unwrap();
    assert_eq!(out.detections.len(), gt.len());
    for g in &gt {
        let (d, p) = out
            .detections
            .iter()
            .filter(|(d, _)| d.class_id == g.class_id)
            .max_by(|a, b| iou(&a.0.bbox, &g.bbox).total_cmp(&iou(&b.0.bbox, &g.bbox)))
            .unwrap();
        let want = if g.class_id == car { "vehicles" } else { "airports" };
        assert_eq!(p.profile.as_deref(), Some(want));
        assert!(iou(&d.bbox, &g.bbox) > 0.95, "{:?} vs {:?}", d.bbox, g.bbox);
    }
}
