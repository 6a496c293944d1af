use crate::constraint::Config;

/// Point-robot collision query.
pub trait CollisionChecker: Send + Sync {
    fn in_collision(&self, q: &Config) -> bool;
}

/// A world without obstacles.
#[derive(Debug, Clone, Copy, Default)]
pub struct FreeSpace;

impl CollisionChecker for FreeSpace {
    fn in_collision(&self, _q: &Config) -> bool {
        false
    }
}

impl<T: CollisionChecker + ?Sized> CollisionChecker for &T {
    fn in_collision(&self, q: &Config) -> bool {
        (**self).in_collision(q)
    }
}
