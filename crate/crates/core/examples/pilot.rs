use std::time::Instant;

use geofuse_core::dataset::*;
use geofuse_core::fcn::*;
use geofuse_core::metrics::{ConfusionMatrix, SegMetrics};
use geofuse_core::raster::Modality;
use geofuse_core::synthgen::*;
use geofuse_core::train::*;

fn eval_model(best: &FcnModel, scenes: &[SceneSample], modality: Modality, clean: bool) -> SegMetrics {
    let mut cm = ConfusionMatrix::new(4);
    for scene in scenes {
        let input = match modality {
            Modality::Fused => {
                if clean {
                    geofuse_core::fusion::fuse(
                        &geofuse_core::fusion::denoise(&scene.lidar).unwrap(),
                        &geofuse_core::fusion::denoise(&scene.sar).unwrap(),
                        &geofuse_core::fusion::denoise(&scene.optical).unwrap(),
                    ).unwrap()
                } else {
                    geofuse_core::fusion::fuse(&scene.lidar, &scene.sar, &scene.optical).unwrap()
                }
            }
            Modality::Lidar => scene.lidar.clone(),
            Modality::Sar => scene.sar.clone(),
            Modality::Optical => scene.optical.clone(),
        };
        let pred = predict(best, &input).unwrap();
        cm.merge(&ConfusionMatrix::from_pair(&pred, &scene.labels).unwrap()).unwrap();
    }
    SegMetrics::from_confusion(&cm)
}

fn main() {
    let scenes = generate_dataset(0, 250, &SceneSpec::default()).unwrap();
    let train_scenes = &scenes[..200];
    let test_scenes = &scenes[200..];

    for (modality, lr, epochs) in [
        (Modality::Fused, 0.03, 8usize),
        (Modality::Lidar, 0.03, 5),
        (Modality::Sar, 0.03, 5),
        (Modality::Optical, 0.03, 5),
        (Modality::Fused, 0.03, 5),
    ] {
        let tiles = scenes_to_tiles(train_scenes, modality, false).unwrap();
        let val: Vec<_> = tiles.iter().step_by(10).cloned().collect();
        let in_channels = tiles[0].0.shape()[0];
        let config = FcnConfig { in_channels, learning_rate: lr, epochs, seed: 42, ..FcnConfig::default() };
        let model = build_fcn(&config).unwrap();
        let t0 = Instant::now();
        let mut budget = BudgetTracker::unlimited();
        match train(&model, &tiles, &val, &mut budget) {
            Ok((best, history)) => {
                let dt = t0.elapsed().as_secs_f64();
                let m = eval_model(&best, test_scenes, modality, false);
                let ious: Vec<f64> = m.per_class.iter().map(|c| (c.iou * 1000.0).round() / 1000.0).collect();
                println!(
                    "{:>8} lr={lr} ep={epochs}: {dt:.0}s, acc {:.4} miou {:.4} ious {ious:?} (last val {:.3})",
                    modality.name(), m.pixel_accuracy, m.mean_iou, history.epochs.last().unwrap().val_loss
                );
            }
            Err(e) => println!("{:>8}: FAILED {e}", modality.name()),
        }
    }
}
