// scratch diagnostic
use emtrack::detect::*;
use emtrack::pipeline::*;
use emtrack::sim::{generate, SceneSpec};

fn main() {
    let spec = SceneSpec { n_objects: 4, frames: 6, seed: 100, stationary_fraction: 0.5, ..Default::default() };
    let seq = generate(&spec).unwrap();
    let grid = seq.grid;
    let frame = &seq.frames[0];
    let ctx = frame_context(frame);
    let Checkpoint::Seg(seg) = load_checkpoint(std::path::Path::new("/tmp/smoke/run7/seg_round_1.emck")).unwrap() else { panic!() };
    let Checkpoint::Det(det) = load_checkpoint(std::path::Path::new("/tmp/smoke/run7/det_round_1.emck")).unwrap() else { panic!() };

    let heat = infer_seg(&seg, &frame.rgb, 160, 96);
    let seg_grid = unproject_heat(&heat, 160, &ctx, grid);
    let feats = feature_stack_3d(&ctx.cloud.points, &ctx.colors, grid);
    let (out, _) = det.forward(&feats.data, (grid.dims[2], grid.dims[1], grid.dims[0]));
    let vol = grid.voxel_count();
    let mut det_grid = emtrack::geom::VoxelGrid::zeros(grid, 1);
    for i in 0..vol { det_grid.values[i] = (1.0/(1.0+(-out[CH_OBJ*vol+i]).exp())) as f32; }

    let cfg = PipelineConfig::default();
    let cues = EnsembleCues { seg_heat: &heat, det_heat: &det_grid };
    let es = e_step(&seq.frames[0], &seq.frames[1], &ctx, grid, &cfg, 12345, Some(&cues));
    println!("ego accepted: {:?}", es.ego.as_ref().map(|e| (e.accepted, e.cycle_error)));
    println!("proposals: {}", es.proposals.len());
    let field = es.field.as_ref().unwrap();
    let mag = field.magnitude_grid(grid);
    // per-object voxel stats
    for b in &frame.boxes {
        let mut mx = (0f32, 0f32, 0f32, 0f64);
        for iz in 0..grid.dims[2] { for iy in 0..grid.dims[1] { for ix in 0..grid.dims[0] {
            let p = grid.center_of(ix, iy, iz);
            if b.box3d.inflated(0.1).contains(&p) {
                let i = grid.linear(ix, iy, iz);
                let m = 1.0 - (-2.0 * mag.values[i] as f64).exp();
                mx.0 = mx.0.max(mag.values[i]);
                mx.1 = mx.1.max(seg_grid.values[i]);
                mx.2 = mx.2.max(det_grid.values[i]);
                let f = m + seg_grid.values[i] as f64 + det_grid.values[i] as f64;
                mx.3 = mx.3.max(f);
            }
        }}}
        println!("obj {} mov={} mag_max={:.2} seg_max={:.2} det_max={:.2} fused_max={:.2}",
                 b.id, b.is_moving, mx.0, mx.1, mx.2, mx.3);
    }
    let above: usize = (0..vol).filter(|&i| {
        let m = 1.0 - (-2.0 * mag.values[i] as f64).exp();
        m + seg_grid.values[i] as f64 + det_grid.values[i] as f64 > 2.0
    }).count();
    let app: usize = (0..vol).filter(|&i| seg_grid.values[i] >= 0.7 && det_grid.values[i] >= 0.7).count();
    println!("fused>2: {above}, appearance-pair>=0.7: {app}");
}
