use alloc::string::String;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("mesh needs at least 4 vertices and 1 tetrahedron (got {n_vertices} vertices, {n_tets} tets)")]
    MeshTooSmall { n_vertices: usize, n_tets: usize },
    #[error("vertex index out of range: tet {tet} references vertex {index}, mesh has {n_vertices}")]
    IndexOutOfRange {
        tet: usize,
        index: usize,
        n_vertices: usize,
    },
    #[error("tet {tet} repeats vertex {vertex}")]
    RepeatedVertex { tet: usize, vertex: usize },
    #[error("non-finite coordinate at vertex {vertex}")]
    NonFiniteVertex { vertex: usize },
    #[error("degenerate tetrahedron {tet} (signed volume {volume:e})")]
    DegenerateTet { tet: usize, volume: f64 },
    #[error("all vertices coincide")]
    CoincidentVertices,
    #[error("isolated vertex {vertex}: zero adjacent volume")]
    IsolatedVertex { vertex: usize },
    #[error("non-positive mass {value} at vertex {vertex}")]
    NonPositiveMass { vertex: usize, value: f64 },
    #[error("eigensolver did not converge after {iterations} iterations")]
    EigenNoConvergence { iterations: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("requested {requested} items but only {available} are available")]
    TooMany { requested: usize, available: usize },
    #[error("kernel matrix numerically singular after jitter ({selected} landmarks selected)")]
    SingularKernel { selected: usize },
    #[error("landmark/mesh mismatch: index {index} with {n_vertices} vertices")]
    LandmarkMismatch { index: usize, n_vertices: usize },
    #[error("duplicate landmark index {0}")]
    DuplicateLandmark(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("token {0} has no incoming edge")]
    IsolatedToken(usize),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {epoch}, sample {sample}")]
    NonFiniteLoss { epoch: usize, sample: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("amplitude too large: deformation inverts tetrahedron {tet}")]
    AmplitudeTooLarge { tet: usize },
    #[error("mesh is not connected")]
    Disconnected,
    #[error("no convolutional feature map in this model variant")]
    NoConvFeatureMap,
    #[error("inconsistent parameter sets")]
    InconsistentParams,
}

pub type Result<T> = core::result::Result<T, Error>;
