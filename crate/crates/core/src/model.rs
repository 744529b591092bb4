//! A built-in spacecraft model: box body, top solar panel and three rod
//! antennas, with 11 landmarks (8 body/panel corners and the 3 antenna tips).
//!
//! Used by the simulator and as the CLI default when no mesh or landmark file
//! is configured.

use crate::geometry::{LabeledMesh, LandmarkSet, PartLabel, Vec3};

const BODY_HALF: [f64; 3] = [0.40, 0.38, 0.15];
const PANEL_THICKNESS: f64 = 0.02;
const ROD_HALF_WIDTH: f64 = 0.012;

fn antenna_segments() -> [(Vec3, Vec3); 3] {
    let z = -BODY_HALF[2];
    [
        (Vec3::new(0.30, 0.25, z), Vec3::new(0.55, 0.45, -0.62)),
        (Vec3::new(0.30, -0.25, z), Vec3::new(0.55, -0.45, -0.62)),
        (Vec3::new(-0.30, 0.0, z), Vec3::new(-0.62, 0.0, -0.50)),
    ]
}

/// The 11 landmarks of the built-in model, in a fixed order.
pub fn landmarks() -> LandmarkSet {
    let [hx, hy, hz] = BODY_HALF;
    let top = hz + PANEL_THICKNESS;
    let mut pts = vec![
        Vec3::new(-hx, -hy, -hz),
        Vec3::new(hx, -hy, -hz),
        Vec3::new(hx, hy, -hz),
        Vec3::new(-hx, hy, -hz),
        Vec3::new(-hx, -hy, top),
        Vec3::new(hx, -hy, top),
        Vec3::new(hx, hy, top),
        Vec3::new(-hx, hy, top),
    ];
    pts.extend(antenna_segments().iter().map(|(_, tip)| *tip));
    LandmarkSet::new(pts).expect("11 finite landmarks")
}

/// The labeled triangle mesh of the built-in model.
pub fn mesh() -> LabeledMesh {
    let mut b = MeshBuilder::default();
    let [hx, hy, hz] = BODY_HALF;
    b.cuboid(
        Vec3::new(-hx, -hy, -hz),
        Vec3::new(hx, hy, hz),
        PartLabel::Body,
    );
    b.cuboid(
        Vec3::new(-hx, -hy, hz),
        Vec3::new(hx, hy, hz + PANEL_THICKNESS),
        PartLabel::SolarPanel,
    );
    let labels = [
        PartLabel::Antenna1,
        PartLabel::Antenna2,
        PartLabel::Antenna3,
    ];
    for ((a, tip), label) in antenna_segments().into_iter().zip(labels) {
        b.rod(a, tip, ROD_HALF_WIDTH, label);
    }
    b.finish()
}

/// Axis-aligned cube of side `side` whose face `z = 0` is centered on the
/// origin and whose body extends toward `+z`.
pub fn face_on_cube(side: f64, label: PartLabel) -> LabeledMesh {
    let h = side / 2.0;
    let mut b = MeshBuilder::default();
    b.cuboid(Vec3::new(-h, -h, 0.0), Vec3::new(h, h, side), label);
    b.finish()
}

#[derive(Default)]
pub(crate) struct MeshBuilder {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    labels: Vec<PartLabel>,
}

impl MeshBuilder {
    fn hexahedron(&mut self, corners: [Vec3; 8], label: PartLabel) {
        // corners: bottom ring 0..4, top ring 4..8, same winding
        let o = self.vertices.len();
        self.vertices.extend_from_slice(&corners);
        const QUADS: [[usize; 4]; 6] = [
            [0, 3, 2, 1],
            [4, 5, 6, 7],
            [0, 1, 5, 4],
            [1, 2, 6, 5],
            [2, 3, 7, 6],
            [3, 0, 4, 7],
        ];
        for q in QUADS {
            self.triangles.push([o + q[0], o + q[1], o + q[2]]);
            self.triangles.push([o + q[0], o + q[2], o + q[3]]);
            self.labels.push(label);
            self.labels.push(label);
        }
    }

    pub(crate) fn cuboid(&mut self, min: Vec3, max: Vec3, label: PartLabel) {
        self.hexahedron(
            [
                Vec3::new(min.x, min.y, min.z),
                Vec3::new(max.x, min.y, min.z),
                Vec3::new(max.x, max.y, min.z),
                Vec3::new(min.x, max.y, min.z),
                Vec3::new(min.x, min.y, max.z),
                Vec3::new(max.x, min.y, max.z),
                Vec3::new(max.x, max.y, max.z),
                Vec3::new(min.x, max.y, max.z),
            ],
            label,
        );
    }

    /// Square-section prism from `a` to `b`.
    pub(crate) fn rod(&mut self, a: Vec3, b: Vec3, half_width: f64, label: PartLabel) {
        let axis = (b - a).normalize();
        let helper = if axis.x.abs() < 0.9 {
            Vec3::x()
        } else {
            Vec3::y()
        };
        let e1 = axis.cross(&helper).normalize() * half_width;
        let e2 = axis.cross(&e1).normalize() * half_width;
        let ring = |c: Vec3| [c - e1 - e2, c + e1 - e2, c + e1 + e2, c - e1 + e2];
        let [a0, a1, a2, a3] = ring(a);
        let [b0, b1, b2, b3] = ring(b);
        self.hexahedron([a0, a1, a2, a3, b0, b1, b2, b3], label);
    }

    pub(crate) fn finish(self) -> LabeledMesh {
        LabeledMesh::new(self.vertices, self.triangles, self.labels)
            .expect("builder emits valid indices")
            .0
    }
}
