//! Voxelize a box into a signed distance field, then query values and
//! gradients by trilinear interpolation.
//!
//! ```bash
//! cargo run -p hsi-core --example signed_distance_field
//! ```

use hsi_core::geometry::{box_mesh, Point};
use hsi_core::sdf::{build_sdf, SdfGrid, SdfOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = box_mesh(Point::new(-0.5, -0.5, 0.0), Point::new(0.5, 0.5, 0.8));
    let sdf = build_sdf(&mesh, &SdfOptions::for_mesh(&mesh, 64))?;
    println!("grid {:?}, cell {:.4} m", sdf.dims, sdf.cell_size);

    for p in [Point::new(0.0, 0.0, 0.4), Point::new(0.0, 0.0, 1.0), Point::new(0.7, 0.0, 0.4)] {
        let g = sdf.sample_gradient(&p);
        println!("d({:.2}, {:.2}, {:.2}) = {:+.4}  grad {:.3?}", p.x, p.y, p.z, g.value, g.gradient.as_slice());
    }

    // binary round trip is bit exact
    let path = std::env::temp_dir().join("box.sdf");
    sdf.save(&path)?;
    assert_eq!(SdfGrid::load(&path)?, sdf);
    Ok(())
}
