//! 4-connected component labeling of label masks with a union-find forest.

use crate::raster::{LabelMask, IGNORE};

struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new() -> Self {
        Self {
            parent: Vec::new(),
            rank: Vec::new(),
        }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.rank.push(0);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra as usize].cmp(&self.rank[rb as usize]) {
            std::cmp::Ordering::Less => self.parent[ra as usize] = rb,
            std::cmp::Ordering::Greater => self.parent[rb as usize] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb as usize] = ra;
                self.rank[ra as usize] += 1;
            }
        }
    }
}

/// Component id per pixel (`0` = ignore, `1..=count` in raster-scan order of
/// first appearance) and the class of each component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub ids: Vec<u32>,
    pub classes: Vec<u16>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.classes.len()
    }

    /// Class of component `id` (1-based).
    pub fn class_of(&self, id: u32) -> u16 {
        self.classes[id as usize - 1]
    }

    /// Pixel indices of every component, indexed by `id - 1`.
    pub fn pixel_lists(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.count()];
        for (i, &id) in self.ids.iter().enumerate() {
            if id != 0 {
                lists[id as usize - 1].push(i);
            }
        }
        lists
    }
}

/// Two-pass labeling: provisional labels with equivalences, then resolution.
pub fn label_components(mask: &LabelMask) -> Components {
    let (h, w) = (mask.height(), mask.width());
    let labels = mask.labels();
    let mut provisional = vec![u32::MAX; h * w];
    let mut sets = DisjointSet::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let l = labels[i];
            if l == IGNORE {
                continue;
            }
            let left = (x > 0 && labels[i - 1] == l).then(|| provisional[i - 1]);
            let up = (y > 0 && labels[i - w] == l).then(|| provisional[i - w]);
            provisional[i] = match (left, up) {
                (Some(a), Some(b)) => {
                    sets.union(a, b);
                    a
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => sets.make(),
            };
        }
    }
    let mut final_id = vec![0u32; sets.parent.len()];
    let mut classes = Vec::new();
    let mut ids = vec![0u32; h * w];
    for i in 0..h * w {
        if provisional[i] == u32::MAX {
            continue;
        }
        let root = sets.find(provisional[i]) as usize;
        if final_id[root] == 0 {
            classes.push(labels[i]);
            final_id[root] = classes.len() as u32;
        }
        ids[i] = final_id[root];
    }
    Components { ids, classes }
}
