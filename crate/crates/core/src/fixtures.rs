//! Bundled procedural scenes used by tests, benchmarks and the CLI.
//!
//! The files live in the workspace `scenes/` directory and are also
//! compiled in, so tests do not depend on the working directory.

use crate::scene::{Scene, SceneError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fixture {
    /// Near-field quad over the right half of a checkered wall.
    Occluder,
    /// Foreground-heavy picket slats.
    Fence,
    /// Background-heavy: a distant flat wall filling the view.
    Backdrop,
    /// Uniform emissive wall filling the view, all in the near field.
    NearWall,
    /// One radiance everywhere, with depth edges in every field.
    Constant,
    /// Plain floor running through all three fields.
    Ramp,
}

impl Fixture {
    pub const ALL: [Fixture; 6] = [
        Fixture::Occluder,
        Fixture::Fence,
        Fixture::Backdrop,
        Fixture::NearWall,
        Fixture::Constant,
        Fixture::Ramp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fixture::Occluder => "occluder",
            Fixture::Fence => "fence",
            Fixture::Backdrop => "backdrop",
            Fixture::NearWall => "near_wall",
            Fixture::Constant => "constant",
            Fixture::Ramp => "ramp",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Fixture::Occluder => include_str!("../../../scenes/occluder.toml"),
            Fixture::Fence => include_str!("../../../scenes/fence.toml"),
            Fixture::Backdrop => include_str!("../../../scenes/backdrop.toml"),
            Fixture::NearWall => include_str!("../../../scenes/near_wall.toml"),
            Fixture::Constant => include_str!("../../../scenes/constant.toml"),
            Fixture::Ramp => include_str!("../../../scenes/ramp.toml"),
        }
    }

    pub fn load(self) -> Result<Scene, SceneError> {
        Scene::from_toml_str(self.source(), self.name(), None)
    }

    pub fn from_name(name: &str) -> Option<Fixture> {
        Fixture::ALL.into_iter().find(|f| f.name() == name)
    }
}
