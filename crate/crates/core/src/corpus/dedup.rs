use std::collections::{BTreeMap, HashMap};

use crate::error::Result;
use crate::nnindex::VectorIndex;

use super::store::ImageFeatureStore;
use super::Post;

pub const DEFAULT_TEXT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_IMAGE_THRESHOLD: f64 = 0.95;

/// Token-set Jaccard overlap. Two empty sets overlap fully.
pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    let a: std::collections::HashSet<&str> = a.iter().map(String::as_str).collect();
    let b: std::collections::HashSet<&str> = b.iter().map(String::as_str).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

fn overlap_sorted(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Number of leading tokens (rarest first) that any set of `len` tokens must
/// share with a partner reaching Jaccard `threshold`.
fn prefix_len(len: usize, threshold: f64) -> usize {
    let min_overlap = ((threshold * len as f64) - 1e-9).ceil().max(1.0) as usize;
    (len + 1).saturating_sub(min_overlap).clamp(1, len)
}

#[derive(Default)]
struct PrefixIndex {
    sets: Vec<Vec<u32>>,
    postings: HashMap<u32, Vec<usize>>,
}

/// Removes near-duplicate texts. Two text posts are duplicates when their
/// token-set Jaccard overlap reaches `threshold` and their image components
/// are identical (both absent, or the same image reference). Posts are
/// scanned in ascending post-id order and each is compared against the
/// posts already kept, so the earliest post of every duplicate group
/// survives. Posts without text always survive. Output keeps input order.
pub fn dedup_text(posts: &[Post], threshold: f64) -> Vec<Post> {
    assert!(threshold > 0.0 && threshold <= 1.0, "overlap threshold must be in (0, 1]");

    // document frequency fixes a global token order, rarest first
    let mut df: HashMap<&str, usize> = HashMap::new();
    for tokens in posts.iter().filter_map(|p| p.tokens.as_ref()) {
        let mut uniq: Vec<&str> = tokens.iter().map(String::as_str).collect();
        uniq.sort_unstable();
        uniq.dedup();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut order: Vec<(&str, usize)> = df.into_iter().collect();
    order.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    let rank: HashMap<&str, u32> = order
        .iter()
        .enumerate()
        .map(|(i, (t, _))| (*t, i as u32))
        .collect();

    let mut by_id: Vec<usize> = (0..posts.len()).collect();
    by_id.sort_by_key(|&i| posts[i].post_id);

    let mut keep = vec![true; posts.len()];
    let mut groups: HashMap<Option<&str>, PrefixIndex> = HashMap::new();
    let mut seen_at = Vec::new();
    for &i in &by_id {
        let Some(tokens) = posts[i].tokens.as_ref() else {
            continue;
        };
        let mut set: Vec<u32> = tokens.iter().map(|t| rank[t.as_str()]).collect();
        set.sort_unstable();
        set.dedup();
        let index = groups.entry(posts[i].image_ref.as_deref()).or_default();

        let p = prefix_len(set.len(), threshold);
        seen_at.clear();
        let mut duplicate = false;
        'probe: for tok in &set[..p] {
            let Some(list) = index.postings.get(tok) else {
                continue;
            };
            for &cand in list {
                if seen_at.contains(&cand) {
                    continue;
                }
                seen_at.push(cand);
                let other = &index.sets[cand];
                let inter = overlap_sorted(&set, other);
                let union = set.len() + other.len() - inter;
                if inter as f64 / union as f64 >= threshold {
                    duplicate = true;
                    break 'probe;
                }
            }
        }
        if duplicate {
            keep[i] = false;
            continue;
        }
        let slot = index.sets.len();
        for tok in &set[..p] {
            index.postings.entry(*tok).or_default().push(slot);
        }
        index.sets.push(set);
    }
    posts
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then(|| p.clone()))
        .collect()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Groups images connected by chains of cosine similarity ≥ `sim_threshold`
/// and maps every image to the smallest reference in its group.
pub fn dedup_images(
    store: &ImageFeatureStore,
    index: &VectorIndex<String>,
    sim_threshold: f64,
) -> Result<BTreeMap<String, String>> {
    let ids = store.ids();
    let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    for (i, (_, v)) in store.iter().enumerate() {
        if crate::linalg::norm(v) == 0.0 {
            continue;
        }
        for n in index.query_within(v, sim_threshold)? {
            if let Some(&j) = pos.get(n.id.as_str()) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut canonical: HashMap<usize, &str> = HashMap::new();
    for i in 0..ids.len() {
        let root = find(&mut parent, i);
        let entry = canonical.entry(root).or_insert(ids[i].as_str());
        if ids[i].as_str() < *entry {
            *entry = ids[i].as_str();
        }
    }
    Ok((0..ids.len())
        .map(|i| {
            let root = find(&mut parent, i);
            (ids[i].clone(), canonical[&root].to_string())
        })
        .collect())
}

/// Rewrites every post's image reference to its canonical representative.
pub fn apply_image_map(posts: &[Post], map: &BTreeMap<String, String>) -> Vec<Post> {
    posts
        .iter()
        .map(|p| {
            let mut p = p.clone();
            if let Some(r) = &p.image_ref {
                if let Some(c) = map.get(r) {
                    p.image_ref = Some(c.clone());
                }
            }
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnindex::{IndexOptions, Metric, TreeMode};
    use proptest::prelude::*;

    fn text_post(id: u64, text: &str) -> Post {
        Post::new(
            id,
            0,
            Some(text.split_whitespace().map(String::from).collect()),
            None,
        )
    }

    fn ids(posts: &[Post]) -> Vec<u64> {
        posts.iter().map(|p| p.post_id).collect()
    }

    #[test]
    fn exact_duplicate_collapses_to_earliest() {
        let posts = vec![text_post(5, "same words here"), text_post(2, "same words here")];
        assert_eq!(ids(&dedup_text(&posts, 0.8)), vec![2]);
    }

    #[test]
    fn nine_of_ten_shared() {
        let a = "t0 t1 t2 t3 t4 t5 t6 t7 t8 t9";
        let b = "t0 t1 t2 t3 t4 t5 t6 t7 t8 x9";
        let (pa, pb) = (text_post(1, a), text_post(2, b));
        let j = jaccard(pa.tokens.as_ref().unwrap(), pb.tokens.as_ref().unwrap());
        assert!((j - 9.0 / 11.0).abs() < 1e-15);
        assert_eq!(ids(&dedup_text(&[pa, pb], 0.8)), vec![1]);
    }

    #[test]
    fn disjoint_texts_survive() {
        let posts = vec![text_post(1, "a b c"), text_post(2, "d e f")];
        assert_eq!(dedup_text(&posts, 0.8).len(), 2);
    }

    #[test]
    fn different_images_are_not_duplicates() {
        let mut a = text_post(1, "a b c");
        let mut b = text_post(2, "a b c");
        a.image_ref = Some("x".into());
        b.image_ref = Some("y".into());
        assert_eq!(dedup_text(&[a.clone(), b], 0.8).len(), 2);
        let mut c = text_post(3, "a b c");
        c.image_ref = Some("x".into());
        assert_eq!(ids(&dedup_text(&[c, a], 0.8)), vec![1]);
    }

    fn brute_force_dedup(posts: &[Post], t: f64) -> Vec<u64> {
        let mut sorted: Vec<&Post> = posts.iter().collect();
        sorted.sort_by_key(|p| p.post_id);
        let mut kept: Vec<&Post> = Vec::new();
        for p in sorted {
            let dup = p.tokens.as_ref().is_some_and(|tp| {
                kept.iter().any(|q| {
                    q.image_ref == p.image_ref
                        && q.tokens.as_ref().is_some_and(|tq| jaccard(tp, tq) >= t)
                })
            });
            if !dup {
                kept.push(p);
            }
        }
        let mut out: Vec<u64> = kept.iter().map(|p| p.post_id).collect();
        out.sort();
        out
    }

    proptest! {
        #[test]
        fn matches_pairwise_scan_and_is_idempotent(
            texts in proptest::collection::vec("[a-f]( [a-f]){0,7}", 1..40),
            images in proptest::collection::vec(proptest::option::of(0u8..3), 40),
            t in 0.3f64..1.0,
        ) {
            let posts: Vec<Post> = texts.iter().enumerate().map(|(i, s)| {
                let mut p = text_post((i * 7 % 41) as u64, s);
                p.image_ref = images[i].map(|x| format!("img{x}"));
                p
            }).collect();
            let once = dedup_text(&posts, t);
            let mut got = ids(&once);
            got.sort();
            prop_assert_eq!(&got, &brute_force_dedup(&posts, t));
            prop_assert_eq!(dedup_text(&once, t), once.clone());
            let mut reversed = posts.clone();
            reversed.reverse();
            let mut rev_ids = ids(&dedup_text(&reversed, t));
            rev_ids.sort();
            prop_assert_eq!(rev_ids, got);
        }
    }

    fn store_of(rows: Vec<(&str, Vec<f64>)>) -> (ImageFeatureStore, VectorIndex<String>) {
        let dim = rows[0].1.len();
        let store = ImageFeatureStore::from_rows(
            dim,
            rows.into_iter().map(|(a, b)| (a.to_string(), b)),
        )
        .unwrap();
        let index = VectorIndex::build(
            store.iter().map(|(id, v)| (id.to_string(), v.to_vec())),
            Metric::Cosine,
            IndexOptions { tree: TreeMode::Always, leaf_size: 2 },
        )
        .unwrap();
        (store, index)
    }

    #[test]
    fn identical_features_merge() {
        let (s, i) = store_of(vec![("b", vec![1.0, 2.0]), ("a", vec![1.0, 2.0])]);
        let m = dedup_images(&s, &i, 0.95).unwrap();
        assert_eq!(m["a"], "a");
        assert_eq!(m["b"], "a");
    }

    #[test]
    fn cosine_096_merges_at_095() {
        // cos = 0.96 for unit vectors (1, 0) and (0.96, 0.28)
        let (s, i) = store_of(vec![("x", vec![1.0, 0.0]), ("y", vec![0.96, 0.28])]);
        let m = dedup_images(&s, &i, 0.95).unwrap();
        assert_eq!(m["y"], "x");
    }

    #[test]
    fn orthogonal_stay_apart_and_chains_merge() {
        let (s, i) = store_of(vec![
            ("a", vec![1.0, 0.0, 0.0]),
            ("b", vec![0.0, 1.0, 0.0]),
            ("c", vec![0.0, 0.0, 1.0]),
        ]);
        let m = dedup_images(&s, &i, 0.95).unwrap();
        assert_eq!(m.values().collect::<std::collections::BTreeSet<_>>().len(), 3);

        // a~b and b~c above threshold, a~c below: one component via the chain
        let th: f64 = 0.2;
        let (s, i) = store_of(vec![
            ("a", vec![1.0, 0.0]),
            ("b", vec![th.cos(), th.sin()]),
            ("c", vec![(2.0 * th).cos(), (2.0 * th).sin()]),
        ]);
        let t = (th.cos() + (2.0 * th).cos()) / 2.0;
        let m = dedup_images(&s, &i, t).unwrap();
        assert_eq!(m["c"], "a");
        assert_eq!(m["b"], "a");
    }

    #[test]
    fn empty_store_empty_map() {
        let store = ImageFeatureStore::new(3);
        let index = VectorIndex::build(
            vec![("z".to_string(), vec![1.0, 0.0, 0.0])],
            Metric::Cosine,
            IndexOptions::default(),
        )
        .unwrap();
        assert!(dedup_images(&store, &index, 0.95).unwrap().is_empty());
    }
}
