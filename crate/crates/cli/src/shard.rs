/// Deals items into `k` shards in round-robin order: item `i` goes to
/// shard `i % k`.
pub fn round_robin<T: Clone>(items: &[T], k: usize) -> Vec<Vec<T>> {
    let mut shards: Vec<Vec<T>> = (0..k).map(|_| Vec::with_capacity(items.len() / k.max(1) + 1)).collect();
    for (i, item) in items.iter().enumerate() {
        shards[i % k].push(item.clone());
    }
    shards
}

/// Directory name of shard `i` inside a sharded index directory.
pub fn shard_dir_name(i: usize) -> String {
    format!("shard-{i:03}")
}
