//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature, `map_mut` runs items on the rayon pool;
//! without it, items run in order on the calling thread. Results are identical
//! either way since items share nothing mutable.

pub fn seq_map_mut<T, U, F>(items: &mut [T], f: F) -> Vec<U>
where
    F: Fn(usize, &mut T) -> U,
{
    items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(feature = "parallel")]
pub fn par_map_mut<T, U, F>(items: &mut [T], f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(usize, &mut T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(feature = "parallel")]
pub fn map_mut<T, U, F>(items: &mut [T], f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(usize, &mut T) -> U + Sync + Send,
{
    par_map_mut(items, f)
}

#[cfg(not(feature = "parallel"))]
pub fn map_mut<T, U, F>(items: &mut [T], f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(usize, &mut T) -> U + Sync + Send,
{
    seq_map_mut(items, f)
}

pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync + Send + Clone,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    let mut owned = items.to_vec();
    map_mut(&mut owned, |i, t| f(i, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved() {
        let mut v: Vec<u64> = (0..100).collect();
        let out = map_mut(&mut v, |i, x| {
            *x += 1;
            i as u64 * 10 + *x
        });
        assert_eq!(out, (0..100).map(|i| i * 11 + 1).collect::<Vec<_>>());
        assert_eq!(v[99], 100);
        let mut w: Vec<u64> = (0..100).collect();
        assert_eq!(seq_map_mut(&mut w, |i, x| { *x += 1; i as u64 * 10 + *x }), out);
    }
}
