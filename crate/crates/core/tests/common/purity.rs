//! Label agreement under the best one-to-one relabelling, by enumerating
//! every permutation of the predicted labels.

pub fn aligned_purity(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let agree = pred.iter().zip(truth).filter(|(a, b)| p[**a] == **b).count();
        best = best.max(agree);
    });
    best as f64 / pred.len() as f64
}

fn permute(p: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == p.len() {
        f(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, f);
        p.swap(i, j);
    }
}
