"""Regenerates toy.csv: a 3x3 grid of cells, 3 countries (one per grid row),
14 years. Run from this directory: python3 make_toy.py"""
import numpy as np

rng = np.random.default_rng(20190601)
n, T, burn = 9, 14, 30
coords = [(float(i % 3), float(i // 3)) for i in range(n)]
k = 3
W = np.zeros((n, n))
for i, (xi, yi) in enumerate(coords):
    d = sorted((np.hypot(xi - xj, yi - yj), j) for j, (xj, yj) in enumerate(coords) if j != i)
    for _, j in d[:k]:
        W[i, j] = 1.0 / k

rho, phi, gamma = 0.3, 0.4, 0.1
beta = dict(gdp=0.5, gdp_sq=-0.01, dry=-0.3, wet=0.2, dry_lag=-0.1, wet_lag=0.05,
            gdp_x_drylag=0.01, gdp_x_wetlag=-0.005)
alpha = rng.normal(0, 0.5, n)
country_gdp = 10 + rng.normal(0, 1, 3)
A_inv = np.linalg.inv(np.eye(n) - rho * W)

y = np.zeros(n)
spei_prev = np.zeros(n)
rows = []
for t in range(burn + T):
    country_gdp = country_gdp + rng.normal(0.2, 0.3, 3)
    gdp = np.array([country_gdp[i // 3] for i in range(n)])
    spei = np.round(rng.normal(0, 1, n), 4)
    dry, wet = np.maximum(-spei, 0), np.maximum(spei, 0)
    dry_l, wet_l = np.maximum(-spei_prev, 0), np.maximum(spei_prev, 0)
    xb = (beta["gdp"] * gdp + beta["gdp_sq"] * gdp**2 + beta["dry"] * dry + beta["wet"] * wet
          + beta["dry_lag"] * dry_l + beta["wet_lag"] * wet_l
          + beta["gdp_x_drylag"] * gdp * dry_l + beta["gdp_x_wetlag"] * gdp * wet_l)
    xi = rng.normal(0, 0.3)
    eps = rng.normal(0, 0.2, n)
    y = A_inv @ (phi * y + gamma * W @ y + xb + alpha + xi + eps)
    spei_prev = spei
    if t >= burn:
        year = 2000 + t - burn
        for i in range(n):
            rows.append((f"cell{i + 1}", year, coords[i][1], coords[i][0], f"C{i // 3 + 1}",
                         y[i], gdp[i], spei[i]))

rows.sort(key=lambda r: (r[0], r[1]))
with open("toy.csv", "w") as f:
    f.write("unit_id,year,lat,lon,country,fert,gdp,spei\n")
    for r in rows:
        f.write(f"{r[0]},{r[1]},{r[2]:.1f},{r[3]:.1f},{r[4]},{r[5]:.6f},{r[6]:.4f},{r[7]:.4f}\n")
