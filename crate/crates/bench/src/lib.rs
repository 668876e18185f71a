//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use ndarray::Array2;
use nlcrowd_core::{
    indicator_datum, make_grid, sample_kernel, DirectionField, KernelSpec, ModelSpec, NonlocalOp,
    PopulationField, Rect, SampledKernel, Segment, SpeedLaw,
};

/// Corridor grid `[−8, 8] × [−4, 4]` with exits at both ends.
pub fn corridor(mesh: f64) -> Arc<nlcrowd_core::GridSpec> {
    Arc::new(
        make_grid(
            Rect::new(-8.0, 8.0, -4.0, 4.0),
            mesh,
            mesh,
            Rect::new(-8.0, 8.0, -3.0, 3.0),
            vec![
                Segment::vertical(-8.0, -3.0, 3.0),
                Segment::vertical(8.0, -3.0, 3.0),
            ],
        )
        .expect("valid corridor"),
    )
}

pub fn bump(grid: &nlcrowd_core::GridSpec) -> Arc<SampledKernel> {
    Arc::new(sample_kernel(&KernelSpec::corridor_bump(), grid).expect("kernel fits"))
}

/// Two crossing groups with mutual avoidance.
pub fn crossing(mesh: f64) -> (ModelSpec, PopulationField) {
    let g = corridor(mesh);
    let k = bump(&g);
    let op = |a: f64, b: f64| {
        NonlocalOp::sum(vec![
            NonlocalOp::gradient_avoidance(a, 0, k.clone()),
            NonlocalOp::gradient_avoidance(b, 1, k.clone()),
        ])
    };
    let dirs = vec![
        DirectionField::corridor(&g, [1.0, 0.0], 0.8, 0.75).expect("corridor"),
        DirectionField::corridor(&g, [-1.0, 0.0], 0.8, 0.75).expect("corridor"),
    ];
    let law = SpeedLaw::linear(4.0, 1.0).expect("law");
    let model = ModelSpec::deviation(
        g.clone(),
        vec![law.clone(), law],
        dirs,
        vec![op(0.3, 0.7), op(0.7, 0.3)],
    );
    let data: Vec<Array2<f64>> = vec![
        indicator_datum(&g, 0.9, Rect::new(-6.4, -3.2, -2.4, 2.4)).expect("datum"),
        indicator_datum(&g, 0.7, Rect::new(3.2, 6.4, -2.4, 2.4)).expect("datum"),
    ];
    (model, PopulationField::new(g, data).expect("layout"))
}
