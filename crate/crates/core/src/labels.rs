use std::collections::BTreeSet;

/// Per-frame map from pixel to instance id; `0` is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceLabelMap {
    height: usize,
    width: usize,
    ids: Vec<u32>,
}

impl InstanceLabelMap {
    pub fn new(height: usize, width: usize, ids: Vec<u32>) -> Self {
        assert_eq!(ids.len(), height * width, "label map size mismatch");
        Self { height, width, ids }
    }

    pub fn background(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn ids_mut(&mut self) -> &mut [u32] {
        &mut self.ids
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.ids[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, id: u32) {
        self.ids[row * self.width + col] = id;
    }

    /// Distinct non-background ids, ascending.
    pub fn instance_ids(&self) -> BTreeSet<u32> {
        self.ids.iter().copied().filter(|&id| id != 0).collect()
    }

    pub fn foreground(&self) -> Vec<bool> {
        self.ids.iter().map(|&id| id != 0).collect()
    }

    pub fn mask_of(&self, id: u32) -> Vec<bool> {
        self.ids.iter().map(|&v| v == id).collect()
    }
}

/// A pixel at a given (frame, row, column) location of a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VideoPixel {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl VideoPixel {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        Self { t, h, w }
    }
}
