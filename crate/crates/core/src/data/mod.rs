//! Datasets: the circle-set generator and its circle-fit analysis, OFF
//! meshes, surface sampling, point-cloud normalization and batching.

mod batches;
mod circles;
mod cloud_io;
mod fit;
mod modelnet;
mod off;
mod sampling;

pub use batches::{draw_subsets, make_batches, Batch, CloudSource, FixedSetSource};
pub use circles::{circle_points, gen_circle_set, CircleNoise, CircleSetSpec, CircleSource};
pub use cloud_io::{load_tensor, read_tensor, save_tensor, write_tensor, CLOUD_MAGIC};
pub use fit::{align_phases, circular_spacings, fit_circle, phase_histogram, radius_histogram, wrap_angle, CircleFit, Histogram};
pub use modelnet::{parse_manifest, DatasetOptions, ManifestEntry, PointCloudDataset, Split};
pub use off::{parse_off, TriangleMesh};
pub use sampling::{normalize_cloud, sample_mesh_points, NormRecord};
