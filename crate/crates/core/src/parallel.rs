//! Ordered data-parallel map over examples.
//!
//! With the `parallel` feature the work is spread over rayon workers;
//! without it every call runs sequentially. Results are always assembled by
//! input index, so output is bitwise independent of the thread count.

/// Worker-count request. `0` means "use the ambient rayon pool", `1` forces
/// sequential execution, anything larger runs on a dedicated pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Parallelism(pub usize);

impl Parallelism {
    pub const AUTO: Parallelism = Parallelism(0);
    pub const SEQUENTIAL: Parallelism = Parallelism(1);

    pub fn threads(n: usize) -> Self {
        Parallelism(n)
    }

    pub fn is_sequential(self) -> bool {
        self.0 == 1 || !cfg!(feature = "parallel")
    }
}

/// Sets the size of the global pool used by [`Parallelism::AUTO`]. Only the
/// first call in a process has any effect.
pub fn configure_global_threads(n: usize) {
    #[cfg(feature = "parallel")]
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

pub fn map_indexed<T, U, F>(items: &[T], par: Parallelism, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    if par.is_sequential() || items.len() < 2 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let run = || items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
        if par.0 == 0 {
            run()
        } else {
            match rayon::ThreadPoolBuilder::new().num_threads(par.0).build() {
                Ok(pool) => pool.install(run),
                Err(_) => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    unreachable!("sequential path taken above")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..500).collect();
        for par in [Parallelism::SEQUENTIAL, Parallelism::AUTO, Parallelism::threads(4)] {
            let out = map_indexed(&items, par, |i, &v| (i as u64) * 1000 + v * v);
            assert!(out.iter().enumerate().all(|(i, &v)| v == i as u64 * 1000 + (i * i) as u64));
        }
    }
}
