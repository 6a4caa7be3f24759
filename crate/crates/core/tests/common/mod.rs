//! Fixtures and CLI helpers shared by the integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use keypoint_consensus::annotation::{
    ImageAnnotation, ImageId, Keypoint, PredictionSet, CUB_NUM_KEYPOINTS,
};
use keypoint_consensus::consensus::{ConsensusResult, KeypointObservation};
use keypoint_consensus::geometry::{Point, Rect};
use keypoint_consensus::io::{self, ConsensusTable, CubImage};
use keypoint_consensus::metrics::AnnotatorStd;
use keypoint_consensus::simulator::{
    simulate_predictions, synthetic_dataset, NoiseModel, SceneParams,
};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_keypoint-consensus"))
}

/// Runs the CLI, returning stderr on a non-zero exit.
pub fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`{}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

pub fn rect(x: f64, y: f64, w: f64, h: f64) -> Rect<f64> {
    Rect::new(x, y, w, h).unwrap()
}

pub fn cub_image(id: u64, object_box: Rect<f64>, visible: &[(usize, f64, f64)]) -> CubImage {
    let mut keypoints = vec![
        Keypoint {
            location: Point::new(0.0, 0.0),
            visible: false
        };
        CUB_NUM_KEYPOINTS
    ];
    for &(k, x, y) in visible {
        keypoints[k] = Keypoint {
            location: Point::new(x, y),
            visible: true,
        };
    }
    CubImage {
        annotation: ImageAnnotation {
            image_id: ImageId(id),
            width: 200.0,
            height: 200.0,
            keypoints,
            object_box,
            class_label: "001.Fixture".into(),
        },
        path: format!("001.Fixture/img_{id}.jpg"),
        is_train: false,
    }
}

/// Consensus results with the given visible keypoints, each its own single
/// inlier.
pub fn consensus_results(visible: &[(usize, f64, f64)]) -> Vec<ConsensusResult<f64>> {
    let mut results = vec![ConsensusResult::invisible(); CUB_NUM_KEYPOINTS];
    for &(k, x, y) in visible {
        let o = KeypointObservation::new(Point::new(x, y), 1.0, 0);
        results[k] = ConsensusResult {
            visible: true,
            location: Some(o.location),
            inliers: vec![o],
            all_filtered: vec![o],
        };
    }
    results
}

pub struct MetricFixture {
    pub annotations: PathBuf,
    pub consensus: PathBuf,
    pub std: PathBuf,
}

/// Four images with hand-countable outcomes; every sigma is 2, so the PCP
/// radius is exactly 3 px.
///
/// 1. Four visible keypoints, beak off by exactly 3 px. Head IOU 0.7,
///    torso exact, body seed inside the object box (IOU 0.925).
/// 2. Beak exact, crown off by 10 px (AE capped at 5), back predicted
///    invisible, invisible tail predicted visible. Head IOU exactly 0.5.
/// 3. Beak and breast visible, no consensus records at all.
/// 4. Nothing visible, nothing predicted.
pub fn metric_fixture(dir: &Path) -> MetricFixture {
    let images = vec![
        cub_image(
            1,
            rect(50.0, 40.0, 40.0, 60.0),
            &[
                (0, 80.0, 80.0),
                (1, 50.0, 50.0),
                (3, 90.0, 100.0),
                (4, 60.0, 40.0),
            ],
        ),
        cub_image(
            2,
            rect(10.0, 10.0, 150.0, 150.0),
            &[(1, 20.0, 20.0), (4, 40.0, 30.0), (0, 100.0, 100.0)],
        ),
        cub_image(
            3,
            rect(10.0, 10.0, 150.0, 150.0),
            &[(1, 70.0, 70.0), (3, 80.0, 90.0)],
        ),
        cub_image(4, rect(10.0, 10.0, 150.0, 150.0), &[]),
    ];
    let mut table = ConsensusTable::new();
    table.insert(
        ImageId(1),
        consensus_results(&[
            (0, 80.0, 80.0),
            (1, 53.0, 50.0),
            (3, 90.0, 100.0),
            (4, 60.0, 40.0),
        ]),
    );
    table.insert(
        ImageId(2),
        consensus_results(&[(1, 20.0, 20.0), (4, 30.0, 30.0), (13, 5.0, 5.0)]),
    );
    table.insert(ImageId(4), consensus_results(&[]));

    let fx = MetricFixture {
        annotations: dir.join("cub"),
        consensus: dir.join("consensus.jsonl"),
        std: dir.join("std.txt"),
    };
    io::write_cub(&fx.annotations, &images).unwrap();
    io::save_consensus(&fx.consensus, &table, &serde_json::Value::Null).unwrap();
    io::save_annotator_std(
        &fx.std,
        &AnnotatorStd::new(vec![2.0; CUB_NUM_KEYPOINTS]).unwrap(),
    )
    .unwrap();
    fx
}

pub struct PipelineFixture {
    pub annotations: String,
    pub predictions: String,
    pub proposals: String,
    pub std: String,
    pub small_sweep_config: String,
}

/// Synthetic scenes written as a CUB directory, a proposal file, a
/// simulated prediction file, a std file and a small sweep config.
pub fn pipeline_fixture(dir: &Path, scenes: usize, proposals: usize) -> PipelineFixture {
    let scenes = synthetic_dataset(scenes, proposals, 21, &SceneParams::default());
    let images: Vec<CubImage> = scenes
        .iter()
        .map(|s| CubImage {
            annotation: s.annotation.clone(),
            path: format!(
                "{}/img_{}.jpg",
                s.annotation.class_label, s.annotation.image_id
            ),
            is_train: s.annotation.image_id.0 % 2 == 1,
        })
        .collect();
    let mut preds = Vec::new();
    let mut props = Vec::new();
    for s in &scenes {
        let rects: Vec<_> = s.proposals.iter().map(|b| b.rect).collect();
        let sim = simulate_predictions(&s.annotation, &rects, &NoiseModel::default()).unwrap();
        for (mut p, b) in sim.into_iter().zip(&s.proposals) {
            p.score = b.score;
            preds.push(p);
            props.push(PredictionSet::proposal(
                s.annotation.image_id,
                b.rect,
                b.score,
            ));
        }
    }
    let path = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let fx = PipelineFixture {
        annotations: path("cub"),
        predictions: path("predictions.jsonl"),
        proposals: path("proposals.jsonl"),
        std: path("std.txt"),
        small_sweep_config: path("sweep.toml"),
    };
    let null = serde_json::Value::Null;
    io::write_cub(Path::new(&fx.annotations), &images).unwrap();
    io::save_predictions(Path::new(&fx.predictions), &preds, &null).unwrap();
    io::save_predictions(Path::new(&fx.proposals), &props, &null).unwrap();
    io::save_annotator_std(
        Path::new(&fx.std),
        &AnnotatorStd::new(vec![3.0; CUB_NUM_KEYPOINTS]).unwrap(),
    )
    .unwrap();
    std::fs::write(
        &fx.small_sweep_config,
        "seed = 3\n\n[simulate]\nimages = 8\nbox_counts = [60, 20]\n",
    )
    .unwrap();
    fx
}
