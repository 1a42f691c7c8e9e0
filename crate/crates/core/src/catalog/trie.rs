/// Node handle inside a [`PrefixTrie`].
pub type NodeId = u32;

#[derive(Debug, Clone)]
struct Node {
    start: u32,
    end: u32,
    children: Vec<(u16, NodeId)>,
}

/// Prefix tree over semantic-ID digit sequences.
///
/// Items are stored once, sorted by their digit sequence, and every node owns the
/// contiguous slice of items beneath it.
#[derive(Debug, Clone)]
pub struct PrefixTrie {
    order: Vec<usize>,
    nodes: Vec<Node>,
}

pub const ROOT: NodeId = 0;

impl PrefixTrie {
    pub fn build<'a, I>(entries: I) -> Self
    where
        I: IntoIterator<Item = (usize, &'a [u16])>,
    {
        let mut entries: Vec<(usize, &[u16])> = entries.into_iter().collect();
        entries.sort_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(&b.0)));
        let mut trie = PrefixTrie {
            order: entries.iter().map(|e| e.0).collect(),
            nodes: vec![Node {
                start: 0,
                end: entries.len() as u32,
                children: Vec::new(),
            }],
        };
        trie.expand(ROOT, &entries, 0);
        trie
    }

    fn expand(&mut self, node: NodeId, entries: &[(usize, &[u16])], depth: usize) {
        let (start, end) = {
            let n = &self.nodes[node as usize];
            (n.start as usize, n.end as usize)
        };
        let mut i = start;
        let mut children = Vec::new();
        while i < end {
            let Some(&digit) = entries[i].1.get(depth) else {
                i += 1;
                continue;
            };
            let mut j = i + 1;
            while j < end && entries[j].1.get(depth) == Some(&digit) {
                j += 1;
            }
            let id = self.nodes.len() as NodeId;
            self.nodes.push(Node {
                start: i as u32,
                end: j as u32,
                children: Vec::new(),
            });
            children.push((digit, id));
            self.expand(id, entries, depth + 1);
            i = j;
        }
        self.nodes[node as usize].children = children;
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn child(&self, node: NodeId, digit: u16) -> Option<NodeId> {
        let children = &self.nodes[node as usize].children;
        children
            .binary_search_by_key(&digit, |c| c.0)
            .ok()
            .map(|i| children[i].1)
    }

    pub fn children(&self, node: NodeId) -> &[(u16, NodeId)] {
        &self.nodes[node as usize].children
    }

    pub fn node_for(&self, prefix: &[u16]) -> Option<NodeId> {
        prefix
            .iter()
            .try_fold(ROOT, |node, &digit| self.child(node, digit))
    }

    pub fn items_under(&self, node: NodeId) -> &[usize] {
        let n = &self.nodes[node as usize];
        &self.order[n.start as usize..n.end as usize]
    }

    /// Items whose digit sequence starts with `prefix`; empty for unknown prefixes.
    pub fn items_with_prefix(&self, prefix: &[u16]) -> &[usize] {
        match self.node_for(prefix) {
            Some(node) => self.items_under(node),
            None => &[],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Vec<Vec<u16>>, PrefixTrie) {
        let ids = vec![
            vec![1, 2, 0],
            vec![0, 5, 0],
            vec![1, 2, 1],
            vec![1, 3, 0],
        ];
        let trie = PrefixTrie::build(ids.iter().enumerate().map(|(i, d)| (i, d.as_slice())));
        (ids, trie)
    }

    #[test]
    fn empty_prefix_is_everything() {
        let (_, trie) = sample();
        let mut all = trie.items_with_prefix(&[]).to_vec();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn prefix_lookups() {
        let (_, trie) = sample();
        let mut got = trie.items_with_prefix(&[1, 2]).to_vec();
        got.sort_unstable();
        assert_eq!(got, vec![0, 2]);
        assert_eq!(trie.items_with_prefix(&[1, 3, 0]), &[3]);
        assert!(trie.items_with_prefix(&[7]).is_empty());
        assert!(trie.items_with_prefix(&[1, 2, 0, 4]).is_empty());
        let node = trie.node_for(&[1]).unwrap();
        let digits: Vec<u16> = trie.children(node).iter().map(|c| c.0).collect();
        assert_eq!(digits, vec![2, 3]);
    }

    #[test]
    fn empty_trie() {
        let trie = PrefixTrie::build(std::iter::empty());
        assert!(trie.is_empty());
        assert!(trie.items_with_prefix(&[]).is_empty());
        assert!(trie.children(ROOT).is_empty());
    }
}
