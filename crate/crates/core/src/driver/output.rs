//! Snapshot writers. Numbers are printed with a fixed format so identical
//! runs produce identical files.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::equations::{Euler, State};
use crate::mesh::Mesh;

/// Legacy VTK unstructured grid: each element becomes an `N x N` grid of
/// bilinear quads over its solution points.
pub fn vtk_string(mesh: &Mesh, eq: &Euler, u: &[State], alpha: &[f64]) -> String {
    let nn = mesh.basis.n_nodes();
    let n = nn - 1;
    let np = nn * nn;
    let ne = mesh.n_elements();
    let npts = ne * np;
    let ncells = ne * n * n;
    let mut s = String::with_capacity(npts * 200);
    s.push_str("# vtk DataFile Version 3.0\nlwfr snapshot\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {npts} double");
    for g in &mesh.geometry {
        for x in &g.coords {
            let _ = writeln!(s, "{:.15e} {:.15e} 0", x[0], x[1]);
        }
    }
    let _ = writeln!(s, "CELLS {ncells} {}", ncells * 5);
    for e in 0..ne {
        let o = e * np;
        for j in 0..n {
            for i in 0..n {
                let p = o + i + nn * j;
                let _ = writeln!(s, "4 {} {} {} {}", p, p + 1, p + 1 + nn, p + nn);
            }
        }
    }
    let _ = writeln!(s, "CELL_TYPES {ncells}");
    for _ in 0..ncells {
        s.push_str("9\n");
    }
    let _ = writeln!(s, "CELL_DATA {ncells}");
    s.push_str("SCALARS alpha double 1\nLOOKUP_TABLE default\n");
    for e in 0..ne {
        let a = alpha.get(e).copied().unwrap_or(0.0);
        for _ in 0..n * n {
            let _ = writeln!(s, "{a:.15e}");
        }
    }
    s.push_str("SCALARS level int 1\nLOOKUP_TABLE default\n");
    for e in 0..ne {
        for _ in 0..n * n {
            let _ = writeln!(s, "{}", mesh.level(e));
        }
    }
    let _ = writeln!(s, "POINT_DATA {npts}");
    let names = ["rho", "rho_u", "rho_v", "energy"];
    for (v, name) in names.iter().enumerate() {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for st in u {
            let _ = writeln!(s, "{:.15e}", st[v]);
        }
    }
    let _ = writeln!(s, "VECTORS velocity double");
    for st in u {
        let _ = writeln!(s, "{:.15e} {:.15e} 0", st[1] / st[0], st[2] / st[0]);
    }
    let _ = writeln!(s, "SCALARS pressure double 1\nLOOKUP_TABLE default");
    for st in u {
        let _ = writeln!(s, "{:.15e}", eq.pressure(st));
    }
    s
}

/// Point cloud with one row per solution point.
pub fn csv_string(mesh: &Mesh, eq: &Euler, u: &[State], alpha: &[f64]) -> String {
    let np = mesh.basis.n_nodes().pow(2);
    let mut s = String::from("element,x,y,rho,rho_u,rho_v,energy,u,v,p,alpha\n");
    for (e, g) in mesh.geometry.iter().enumerate() {
        let a = alpha.get(e).copied().unwrap_or(0.0);
        for (p, x) in g.coords.iter().enumerate() {
            let st = &u[e * np + p];
            let _ = writeln!(
                s,
                "{e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{a:.15e}",
                x[0],
                x[1],
                st[0],
                st[1],
                st[2],
                st[3],
                st[1] / st[0],
                st[2] / st[0],
                eq.pressure(st)
            );
        }
    }
    s
}

pub fn write_vtk(path: &Path, mesh: &Mesh, eq: &Euler, u: &[State], alpha: &[f64]) -> io::Result<()> {
    std::fs::write(path, vtk_string(mesh, eq, u, alpha))
}

pub fn write_csv(path: &Path, mesh: &Mesh, eq: &Euler, u: &[State], alpha: &[f64]) -> io::Result<()> {
    std::fs::write(path, csv_string(mesh, eq, u, alpha))
}
