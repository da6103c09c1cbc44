//! Biquadratic space on a graded mesh: interpolation, hanging-node
//! constraints and prolongation from a coarser space.
use std::sync::Arc;

use fosls_twophase::fespace::{prolong, BcSpec, Space};
use fosls_twophase::mesh::{Domain, MarkSet, Mesh};

fn main() -> fosls_twophase::Result<()> {
    let coarse_mesh = Arc::new(Mesh::build_uniform(2, 2, Domain::unit_square())?);
    let first: MarkSet = coarse_mesh.leaves().iter().copied().take(1).collect();
    let fine_mesh = Arc::new(coarse_mesh.refine(&first)?);
    let coarse = Space::new(coarse_mesh, 2, BcSpec::free(1))?;
    let fine = Space::new(fine_mesh, 2, BcSpec::free(1))?;
    println!("coarse: {} nodes; fine: {} nodes, {} constrained", coarse.n_nodes(), fine.n_nodes(), fine.constraints().len());

    // a biquadratic function is reproduced exactly on both spaces
    let f = |x: [f64; 2]| x[0] * x[0] * x[1] - 0.5 * x[1] * x[1] + x[0];
    let c = coarse.interpolate(|x, v| v[0] = f(x));
    let p = prolong(&coarse, &fine, &c)?;
    let direct = fine.interpolate(|x, v| v[0] = f(x));
    let err = p.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |prolonged - interpolated| = {err:.2e}");
    let (vals, grads) = fine.eval_at(&p, [0.3, 0.7]).expect("inside");
    println!("value at (0.3, 0.7): {:.6} (exact {:.6}), gradient {:?}", vals[0], f([0.3, 0.7]), grads[0]);
    Ok(())
}
