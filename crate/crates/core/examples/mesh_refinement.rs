//! Local quadtree refinement with the 1-irregular closure.
use fosls_twophase::mesh::{Domain, MarkSet, Mesh};

fn main() -> fosls_twophase::Result<()> {
    let mut mesh = Mesh::build_uniform(2, 2, Domain::unit_square())?;
    // refine toward the lower-left corner three times
    for round in 1..=3 {
        let corner = mesh.locate([1e-3, 1e-3]).expect("inside").0;
        let marks: MarkSet = std::iter::once(corner).collect();
        let closed = mesh.closure(&marks)?;
        mesh = mesh.refine(&marks)?;
        println!(
            "round {round}: marked 1, closure {}, leaves {}, hanging vertices {}, max level {}, 1-irregular {}",
            closed.len(),
            mesh.n_leaves(),
            mesh.hanging_vertices().len(),
            mesh.max_level(),
            mesh.is_one_irregular()
        );
    }
    let area: f64 = mesh.leaves().iter().map(|&id| mesh.element_area(id)).sum();
    println!("total leaf area {area}");
    Ok(())
}
