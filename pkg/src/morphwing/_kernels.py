"""Compiled numerical core.

Flat-array kernels for the multibody dynamics, the blade-element unsteady
aerodynamics and the closed-loop integration paths.  Everything here is
deliberately dataclass-free so numba can compile it; the public modules
wrap these functions with typed interfaces.  Inner loops are written in
scalar form: this code sits under a 200 Hz receding-horizon optimizer and
a 10 kHz integrator, so allocation churn matters.

Layout conventions
------------------
Robot state vector ``x`` (25 entries):
  0:3   position, world NED
  3:7   quaternion (w,x,y,z), body->world
  7:10  linear velocity, world
  10:13 angular velocity, body frame
  13:17 active joints  [shoulder_L, elbow_L, shoulder_R, elbow_R]
  17:21 active joint rates
  21:23 passive feather joints [L, R]
  23:25 passive feather rates

Augmented plant state: ``[x (25), Y (12), xi (2*NE)]`` where Y is the
computational-structure state and xi holds the per-element indicial lag
states.

Generalized velocity for the equations of motion (12):
  [omega_world (3), v_world (3), plunge_L, feather_L, elbow_L,
   plunge_R, feather_R, elbow_R]

Morphology/aero parameter vector ``P``: see the ``P_*`` index constants.
Blade-element table ``E``: rows [side(0=L,1=R), segment(0=prox,1=dist),
span station from segment root (m), width (m), chord (m), area (m^2)].
Gait parameter vector ``G``: [freq, sh_amp, sh_bias, el_amp, el_phase,
el_bias, asymmetry, bias_gain, amp_gain, phase_gain].

Wing kinematics arrays ("kin", one per wing): a (13, 3) matrix whose rows
are R2 (3 rows), R3 (3 rows), r_sh, v_sh, r_elb, v_elb, om2, om3 and a
(5, 3) auxiliary block [a_pl, a_fe, a_el, adot_pl, adot_fe, adot_el] is
packed behind it; see ``KIN_*`` row constants.
"""

import numpy as np
from numba import njit

NX = 25  # robot state size
NY = 12  # structure state size (6 second-order elements)
NDIAG = 16  # diagnostics vector length

# indices into the packed parameter vector P
P_MBODY = 0
P_IBODY = 1          # 1..9, row-major 3x3
P_XSH, P_YSH, P_ZSH = 10, 11, 12
P_L1, P_M1, P_C1 = 13, 14, 15
P_L2, P_M2, P_C2 = 16, 17, 18
P_G = 19
P_KFE, P_CFE, P_FEREST = 20, 21, 22
P_RHO, P_CLA, P_CD0, P_STALL, P_VMIN = 23, 24, 25, 26, 27
P_KP, P_KD = 28, 29
P_LL, P_AM = 30, 31
NPAR = 32

# diagnostics layout
D_FB = 0      # 0:3 total aero force, body frame
D_MB = 3      # 3:6 total aero moment about body origin, body frame
D_TAU = 6     # 6:10 active joint torques
D_PAERO = 10
D_PACT = 11
D_PDAMP = 12
D_STALL = 13
D_DEGEN = 14
D_SPARE = 15

# Wagner step response, two-pole exponential fit; the argument is the
# distance travelled in semichords.  phi(s) = 1 - A1 e^{-B1 s} - A2 e^{-B2 s}
WA1 = 0.165
WB1 = 0.0455
WA2 = 0.335
WB2 = 0.3

GEN_UNKNOWN = np.array([0, 1, 2, 3, 4, 5, 7, 10], dtype=np.int64)
GEN_ACTIVE = np.array([6, 8, 9, 11], dtype=np.int64)

# rows of the per-wing kinematics pack (18 x 3 array)
KIN_R2 = 0       # rows 0:3   proximal plate rotation
KIN_R3 = 3       # rows 3:6   distal plate rotation
KIN_RSH = 6      # shoulder point
KIN_VSH = 7
KIN_RELB = 8     # elbow point
KIN_VELB = 9
KIN_OM2 = 10     # proximal angular velocity (world)
KIN_OM3 = 11
KIN_APL = 12     # joint axes (world)
KIN_AFE = 13
KIN_AEL = 14
KIN_DPL = 15     # joint axis rates
KIN_DFE = 16
KIN_DEL = 17
KIN_ROWS = 18


@njit(cache=True)
def _quat_to_matrix(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    R = np.empty((3, 3))
    R[0, 0] = 1 - 2 * (y * y + z * z)
    R[0, 1] = 2 * (x * y - w * z)
    R[0, 2] = 2 * (x * z + w * y)
    R[1, 0] = 2 * (x * y + w * z)
    R[1, 1] = 1 - 2 * (x * x + z * z)
    R[1, 2] = 2 * (y * z - w * x)
    R[2, 0] = 2 * (x * z - w * y)
    R[2, 1] = 2 * (y * z + w * x)
    R[2, 2] = 1 - 2 * (x * x + y * y)
    return R


@njit(cache=True)
def _quat_derivative(q, w):
    qd = np.empty(4)
    qd[0] = 0.5 * (-q[1] * w[0] - q[2] * w[1] - q[3] * w[2])
    qd[1] = 0.5 * (q[0] * w[0] + q[2] * w[2] - q[3] * w[1])
    qd[2] = 0.5 * (q[0] * w[1] - q[1] * w[2] + q[3] * w[0])
    qd[3] = 0.5 * (q[0] * w[2] + q[1] * w[1] - q[2] * w[0])
    return qd


@njit(cache=True)
def _solve_spd(A, b):
    """Cholesky solve of a small SPD system (in-place work copies)."""
    n = A.shape[0]
    L = A.copy()
    for j in range(n):
        s = L[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        d = np.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            s = L[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / d
    y = b.copy()
    for i in range(n):
        s = y[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * y[k]
        y[i] = s / L[i, i]
    return y


@njit(cache=True)
def _solve_lu(A, b):
    """Partial-pivot LU solve of a small dense system."""
    n = A.shape[0]
    U = A.copy()
    x = b.copy()
    piv = np.empty(n, dtype=np.int64)
    for k in range(n):
        pmax = abs(U[k, k])
        prow = k
        for i in range(k + 1, n):
            a = abs(U[i, k])
            if a > pmax:
                pmax = a
                prow = i
        piv[k] = prow
        if prow != k:
            for j in range(n):
                tmp = U[k, j]
                U[k, j] = U[prow, j]
                U[prow, j] = tmp
            tmp = x[k]
            x[k] = x[prow]
            x[prow] = tmp
        if U[k, k] == 0.0:
            return x * np.nan
        inv = 1.0 / U[k, k]
        for i in range(k + 1, n):
            f = U[i, k] * inv
            U[i, k] = f
            for j in range(k + 1, n):
                U[i, j] -= f * U[k, j]
            x[i] -= f * x[k]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= U[i, j] * x[j]
        x[i] = s / U[i, i]
    return x


# --- multibody kinematics ----------------------------------------------------


@njit(cache=True)
def _wing_kinematics(p, Rb, v, w_w, sgn, th_s, th_f, th_e, thd_s, thd_f, thd_e, P):
    """Pose, velocity and joint-axis data for one wing chain.

    ``sgn`` is -1 for the left wing (spans -y) and +1 for the right.  The
    chain is shoulder plunge -> root feathering -> proximal plate -> elbow
    fold -> distal plate; joint axes are mirrored between sides so equal
    joint angles give a bilaterally symmetric posture.  Returns the packed
    (18, 3) kinematics block plus COM data (com1, vcom1, com2, vcom2).
    """
    kin = np.empty((KIN_ROWS, 3))

    # shoulder point
    shx = P[P_XSH]
    shy = sgn * P[P_YSH]
    shz = P[P_ZSH]
    dshx = Rb[0, 0] * shx + Rb[0, 1] * shy + Rb[0, 2] * shz
    dshy = Rb[1, 0] * shx + Rb[1, 1] * shy + Rb[1, 2] * shz
    dshz = Rb[2, 0] * shx + Rb[2, 1] * shy + Rb[2, 2] * shz
    kin[KIN_RSH, 0] = p[0] + dshx
    kin[KIN_RSH, 1] = p[1] + dshy
    kin[KIN_RSH, 2] = p[2] + dshz
    kin[KIN_VSH, 0] = v[0] + w_w[1] * dshz - w_w[2] * dshy
    kin[KIN_VSH, 1] = v[1] + w_w[2] * dshx - w_w[0] * dshz
    kin[KIN_VSH, 2] = v[2] + w_w[0] * dshy - w_w[1] * dshx

    # plunge about -sgn*x_body so a positive angle raises either wing
    c1, s1 = np.cos(-sgn * th_s), np.sin(-sgn * th_s)
    # R1 = Rb @ Rx(-sgn*th_s): col0 = Rb[:,0]; col1 = c*Rb[:,1] + s*Rb[:,2];
    # col2 = -s*Rb[:,1] + c*Rb[:,2]
    R1 = np.empty((3, 3))
    for i in range(3):
        R1[i, 0] = Rb[i, 0]
        R1[i, 1] = c1 * Rb[i, 1] + s1 * Rb[i, 2]
        R1[i, 2] = -s1 * Rb[i, 1] + c1 * Rb[i, 2]
    for i in range(3):
        kin[KIN_APL, i] = -sgn * Rb[i, 0]
        kin[KIN_AFE, i] = R1[i, 1]

    # om1 = w_w + a_pl*thd_s
    om1x = w_w[0] + kin[KIN_APL, 0] * thd_s
    om1y = w_w[1] + kin[KIN_APL, 1] * thd_s
    om1z = w_w[2] + kin[KIN_APL, 2] * thd_s

    # feathering about the local spanwise axis; positive = leading edge up
    c2, s2 = np.cos(th_f), np.sin(th_f)
    # R2 = R1 @ Ry(th_f): col0 = c*R1[:,0] - s*R1[:,2]; col1 = R1[:,1];
    # col2 = s*R1[:,0] + c*R1[:,2]
    for i in range(3):
        kin[KIN_R2 + i, 0] = c2 * R1[i, 0] - s2 * R1[i, 2]
        kin[KIN_R2 + i, 1] = R1[i, 1]
        kin[KIN_R2 + i, 2] = s2 * R1[i, 0] + c2 * R1[i, 2]
    kin[KIN_OM2, 0] = om1x + kin[KIN_AFE, 0] * thd_f
    kin[KIN_OM2, 1] = om1y + kin[KIN_AFE, 1] * thd_f
    kin[KIN_OM2, 2] = om1z + kin[KIN_AFE, 2] * thd_f

    # elbow fold about sgn*z_local sweeps the distal plate backwards
    for i in range(3):
        kin[KIN_AEL, i] = sgn * kin[KIN_R2 + i, 2]
    c3, s3 = np.cos(sgn * th_e), np.sin(sgn * th_e)
    # R3 = R2 @ Rz(sgn*th_e): col0 = c*R2[:,0] + s*R2[:,1];
    # col1 = -s*R2[:,0] + c*R2[:,1]; col2 = R2[:,2]
    for i in range(3):
        kin[KIN_R3 + i, 0] = c3 * kin[KIN_R2 + i, 0] + s3 * kin[KIN_R2 + i, 1]
        kin[KIN_R3 + i, 1] = -s3 * kin[KIN_R2 + i, 0] + c3 * kin[KIN_R2 + i, 1]
        kin[KIN_R3 + i, 2] = kin[KIN_R2 + i, 2]
    kin[KIN_OM3, 0] = kin[KIN_OM2, 0] + kin[KIN_AEL, 0] * thd_e
    kin[KIN_OM3, 1] = kin[KIN_OM2, 1] + kin[KIN_AEL, 1] * thd_e
    kin[KIN_OM3, 2] = kin[KIN_OM2, 2] + kin[KIN_AEL, 2] * thd_e

    # elbow point: shoulder + R2 @ (0, sgn*L1, 0)
    L1 = P[P_L1]
    for i in range(3):
        d = kin[KIN_R2 + i, 1] * sgn * L1
        kin[KIN_RELB, i] = kin[KIN_RSH, i] + d
    kin[KIN_VELB, 0] = kin[KIN_VSH, 0] + (kin[KIN_OM2, 1] * (kin[KIN_RELB, 2] - kin[KIN_RSH, 2])
                                          - kin[KIN_OM2, 2] * (kin[KIN_RELB, 1] - kin[KIN_RSH, 1]))
    kin[KIN_VELB, 1] = kin[KIN_VSH, 1] + (kin[KIN_OM2, 2] * (kin[KIN_RELB, 0] - kin[KIN_RSH, 0])
                                          - kin[KIN_OM2, 0] * (kin[KIN_RELB, 2] - kin[KIN_RSH, 2]))
    kin[KIN_VELB, 2] = kin[KIN_VSH, 2] + (kin[KIN_OM2, 0] * (kin[KIN_RELB, 1] - kin[KIN_RSH, 1])
                                          - kin[KIN_OM2, 1] * (kin[KIN_RELB, 0] - kin[KIN_RSH, 0]))

    # joint-axis rates (each axis fixed in the body carrying it)
    kin[KIN_DPL, 0] = w_w[1] * kin[KIN_APL, 2] - w_w[2] * kin[KIN_APL, 1]
    kin[KIN_DPL, 1] = w_w[2] * kin[KIN_APL, 0] - w_w[0] * kin[KIN_APL, 2]
    kin[KIN_DPL, 2] = w_w[0] * kin[KIN_APL, 1] - w_w[1] * kin[KIN_APL, 0]
    kin[KIN_DFE, 0] = om1y * kin[KIN_AFE, 2] - om1z * kin[KIN_AFE, 1]
    kin[KIN_DFE, 1] = om1z * kin[KIN_AFE, 0] - om1x * kin[KIN_AFE, 2]
    kin[KIN_DFE, 2] = om1x * kin[KIN_AFE, 1] - om1y * kin[KIN_AFE, 0]
    kin[KIN_DEL, 0] = (kin[KIN_OM2, 1] * kin[KIN_AEL, 2] - kin[KIN_OM2, 2] * kin[KIN_AEL, 1])
    kin[KIN_DEL, 1] = (kin[KIN_OM2, 2] * kin[KIN_AEL, 0] - kin[KIN_OM2, 0] * kin[KIN_AEL, 2])
    kin[KIN_DEL, 2] = (kin[KIN_OM2, 0] * kin[KIN_AEL, 1] - kin[KIN_OM2, 1] * kin[KIN_AEL, 0])

    # plate centres of mass (quarter-chord line is the structural y axis,
    # so the plate centre sits half a chord behind it... -c/4 chordwise)
    com = np.empty((4, 3))  # com1, vcom1, com2, vcom2
    cc1 = -0.25 * P[P_C1]
    for i in range(3):
        com[0, i] = kin[KIN_RSH, i] + kin[KIN_R2 + i, 0] * cc1 + kin[KIN_R2 + i, 1] * sgn * 0.5 * L1
    com[1, 0] = kin[KIN_VSH, 0] + (kin[KIN_OM2, 1] * (com[0, 2] - kin[KIN_RSH, 2])
                                   - kin[KIN_OM2, 2] * (com[0, 1] - kin[KIN_RSH, 1]))
    com[1, 1] = kin[KIN_VSH, 1] + (kin[KIN_OM2, 2] * (com[0, 0] - kin[KIN_RSH, 0])
                                   - kin[KIN_OM2, 0] * (com[0, 2] - kin[KIN_RSH, 2]))
    com[1, 2] = kin[KIN_VSH, 2] + (kin[KIN_OM2, 0] * (com[0, 1] - kin[KIN_RSH, 1])
                                   - kin[KIN_OM2, 1] * (com[0, 0] - kin[KIN_RSH, 0]))
    L2 = P[P_L2]
    cc2 = -0.25 * P[P_C2]
    for i in range(3):
        com[2, i] = kin[KIN_RELB, i] + kin[KIN_R3 + i, 0] * cc2 + kin[KIN_R3 + i, 1] * sgn * 0.5 * L2
    com[3, 0] = kin[KIN_VELB, 0] + (kin[KIN_OM3, 1] * (com[2, 2] - kin[KIN_RELB, 2])
                                    - kin[KIN_OM3, 2] * (com[2, 1] - kin[KIN_RELB, 1]))
    com[3, 1] = kin[KIN_VELB, 1] + (kin[KIN_OM3, 2] * (com[2, 0] - kin[KIN_RELB, 0])
                                    - kin[KIN_OM3, 0] * (com[2, 2] - kin[KIN_RELB, 2]))
    com[3, 2] = kin[KIN_VELB, 2] + (kin[KIN_OM3, 0] * (com[2, 1] - kin[KIN_RELB, 1])
                                    - kin[KIN_OM3, 1] * (com[2, 0] - kin[KIN_RELB, 0]))
    return kin, com


@njit(cache=True)
def _both_wings(x, P):
    p = x[0:3]
    Rb = _quat_to_matrix(x[3:7])
    v = x[7:10]
    w_w = np.empty(3)
    for i in range(3):
        w_w[i] = Rb[i, 0] * x[10] + Rb[i, 1] * x[11] + Rb[i, 2] * x[12]
    kinL, comL = _wing_kinematics(p, Rb, v, w_w, -1.0, x[13], x[21], x[14],
                                  x[17], x[23], x[18], P)
    kinR, comR = _wing_kinematics(p, Rb, v, w_w, 1.0, x[15], x[22], x[16],
                                  x[19], x[24], x[20], P)
    return Rb, w_w, kinL, comL, kinR, comR


@njit(cache=True)
def _plate_inertia_world(kin, row, m, L, c):
    """World-frame inertia of a thin plate whose rotation occupies
    kin[row:row+3]."""
    Ix = m * L * L / 12.0
    Iy = m * c * c / 12.0
    Iz = m * (L * L + c * c) / 12.0
    Iw = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            Iw[i, j] = (Ix * kin[row + i, 0] * kin[row + j, 0]
                        + Iy * kin[row + i, 1] * kin[row + j, 1]
                        + Iz * kin[row + i, 2] * kin[row + j, 2])
    return Iw


@njit(cache=True)
def _mass_add_body(M, m, Iw, com, p, jcols, jaxs, jancs, nj):
    """Closed-form mass-matrix blocks of one body.

    jcols: generalized indices of the path joints; jaxs/jancs their world
    axes and anchor points, rows of (3,) arrays.
    """
    dx = com[0] - p[0]
    dy = com[1] - p[1]
    dz = com[2] - p[2]
    d2 = dx * dx + dy * dy + dz * dz
    # (w,w): Iw + m(|d|^2 I - d d^T)
    M[0, 0] += Iw[0, 0] + m * (d2 - dx * dx)
    M[0, 1] += Iw[0, 1] - m * dx * dy
    M[0, 2] += Iw[0, 2] - m * dx * dz
    M[1, 1] += Iw[1, 1] + m * (d2 - dy * dy)
    M[1, 2] += Iw[1, 2] - m * dy * dz
    M[2, 2] += Iw[2, 2] + m * (d2 - dz * dz)
    # (w,v): m skew(d)
    M[0, 4] += -m * dz
    M[0, 5] += m * dy
    M[1, 3] += m * dz
    M[1, 5] += -m * dx
    M[2, 3] += -m * dy
    M[2, 4] += m * dx
    # (v,v): m I
    M[3, 3] += m
    M[4, 4] += m
    M[5, 5] += m
    for k in range(nj):
        ja = jaxs[k]
        jo = jancs[k]
        cx = ja[1] * (com[2] - jo[2]) - ja[2] * (com[1] - jo[1])
        cy = ja[2] * (com[0] - jo[0]) - ja[0] * (com[2] - jo[2])
        cz = ja[0] * (com[1] - jo[1]) - ja[1] * (com[0] - jo[0])
        col = jcols[k]
        # (w,j): m d x c + Iw a
        M[0, col] += m * (dy * cz - dz * cy) + Iw[0, 0] * ja[0] + Iw[0, 1] * ja[1] + Iw[0, 2] * ja[2]
        M[1, col] += m * (dz * cx - dx * cz) + Iw[1, 0] * ja[0] + Iw[1, 1] * ja[1] + Iw[1, 2] * ja[2]
        M[2, col] += m * (dx * cy - dy * cx) + Iw[2, 0] * ja[0] + Iw[2, 1] * ja[1] + Iw[2, 2] * ja[2]
        # (v,j): m c
        M[3, col] += m * cx
        M[4, col] += m * cy
        M[5, col] += m * cz
        # (j,l) joint-joint block, upper triangle only (mirrored later)
        for l in range(nj):
            if jcols[l] < col:
                continue
            jb = jaxs[l]
            jo2 = jancs[l]
            ex = jb[1] * (com[2] - jo2[2]) - jb[2] * (com[1] - jo2[1])
            ey = jb[2] * (com[0] - jo2[0]) - jb[0] * (com[2] - jo2[2])
            ez = jb[0] * (com[1] - jo2[1]) - jb[1] * (com[0] - jo2[0])
            s = m * (cx * ex + cy * ey + cz * ez)
            for i in range(3):
                s += ja[i] * (Iw[i, 0] * jb[0] + Iw[i, 1] * jb[1] + Iw[i, 2] * jb[2])
            M[col, jcols[l]] += s


@njit(cache=True)
def _symmetrize_joint_blocks(M):
    for a in range(12):
        for b in range(a + 1, 12):
            if a < 6 and b >= 6:
                M[b, a] = M[a, b]
            elif a >= 6 and b >= 6:
                M[b, a] = M[a, b]


@njit(cache=True)
def _bias_add_body(h, m, Iw, com, vcom, omb, p, v, w_w, gz,
                   jcols, jaxs, jancs, jvancs, jadots, jqds, nj):
    """Velocity-product + gravity bias of one body, projected into h."""
    accx = w_w[1] * (vcom[2] - v[2]) - w_w[2] * (vcom[1] - v[1])
    accy = w_w[2] * (vcom[0] - v[0]) - w_w[0] * (vcom[2] - v[2])
    accz = w_w[0] * (vcom[1] - v[1]) - w_w[1] * (vcom[0] - v[0])
    odx = 0.0
    ody = 0.0
    odz = 0.0
    for k in range(nj):
        ad = jadots[k]
        ja = jaxs[k]
        jo = jancs[k]
        jv = jvancs[k]
        qd = jqds[k]
        rx = com[0] - jo[0]
        ry = com[1] - jo[1]
        rz = com[2] - jo[2]
        ux = vcom[0] - jv[0]
        uy = vcom[1] - jv[1]
        uz = vcom[2] - jv[2]
        accx += (ad[1] * rz - ad[2] * ry + ja[1] * uz - ja[2] * uy) * qd
        accy += (ad[2] * rx - ad[0] * rz + ja[2] * ux - ja[0] * uz) * qd
        accz += (ad[0] * ry - ad[1] * rx + ja[0] * uy - ja[1] * ux) * qd
        odx += ad[0] * qd
        ody += ad[1] * qd
        odz += ad[2] * qd
    Fx = m * accx
    Fy = m * accy
    Fz = m * (accz - gz)
    Iox = Iw[0, 0] * omb[0] + Iw[0, 1] * omb[1] + Iw[0, 2] * omb[2]
    Ioy = Iw[1, 0] * omb[0] + Iw[1, 1] * omb[1] + Iw[1, 2] * omb[2]
    Ioz = Iw[2, 0] * omb[0] + Iw[2, 1] * omb[1] + Iw[2, 2] * omb[2]
    Tx = Iw[0, 0] * odx + Iw[0, 1] * ody + Iw[0, 2] * odz + omb[1] * Ioz - omb[2] * Ioy
    Ty = Iw[1, 0] * odx + Iw[1, 1] * ody + Iw[1, 2] * odz + omb[2] * Iox - omb[0] * Ioz
    Tz = Iw[2, 0] * odx + Iw[2, 1] * ody + Iw[2, 2] * odz + omb[0] * Ioy - omb[1] * Iox
    dx = com[0] - p[0]
    dy = com[1] - p[1]
    dz = com[2] - p[2]
    h[0] += dy * Fz - dz * Fy + Tx
    h[1] += dz * Fx - dx * Fz + Ty
    h[2] += dx * Fy - dy * Fx + Tz
    h[3] += Fx
    h[4] += Fy
    h[5] += Fz
    for k in range(nj):
        ja = jaxs[k]
        jo = jancs[k]
        cx = ja[1] * (com[2] - jo[2]) - ja[2] * (com[1] - jo[1])
        cy = ja[2] * (com[0] - jo[0]) - ja[0] * (com[2] - jo[2])
        cz = ja[0] * (com[1] - jo[1]) - ja[1] * (com[0] - jo[0])
        h[jcols[k]] += cx * Fx + cy * Fy + cz * Fz + ja[0] * Tx + ja[1] * Ty + ja[2] * Tz


@njit(cache=True)
def _ext_force_into(h, F, r, p, jcols, jaxs, jancs, nj):
    """Subtract the generalized force of an external point force from h."""
    rx = r[0] - p[0]
    ry = r[1] - p[1]
    rz = r[2] - p[2]
    h[0] -= ry * F[2] - rz * F[1]
    h[1] -= rz * F[0] - rx * F[2]
    h[2] -= rx * F[1] - ry * F[0]
    h[3] -= F[0]
    h[4] -= F[1]
    h[5] -= F[2]
    for k in range(nj):
        ja = jaxs[k]
        jo = jancs[k]
        cx = ja[1] * (r[2] - jo[2]) - ja[2] * (r[1] - jo[1])
        cy = ja[2] * (r[0] - jo[0]) - ja[0] * (r[2] - jo[2])
        cz = ja[0] * (r[1] - jo[1]) - ja[1] * (r[0] - jo[0])
        h[jcols[k]] -= cx * F[0] + cy * F[1] + cz * F[2]


@njit(cache=True)
def _assemble_mh(x, P, Rb, w_w, kinL, comL, kinR, comR, ext_pts, ext_F, ext_body):
    """12x12 mass matrix and bias vector h so that M*du = -h + Q_active.

    h collects velocity products, gravity, negated passive spring-damper
    torques and negated external point forces.  External forces are given
    per point with the owning body index (0=base, 1=prox L, 2=dist L,
    3=prox R, 4=dist R).
    """
    p = x[0:3]
    v = x[7:10]
    gz = P[P_G]

    M = np.zeros((12, 12))
    h = np.zeros(12)

    Ib = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            Ib[i, j] = P[P_IBODY + 3 * i + j]
    Iw0 = Rb @ Ib @ Rb.T

    jc0 = np.empty(0, dtype=np.int64)
    jm0 = np.empty((0, 3))
    jq0 = np.empty(0)
    _mass_add_body(M, P[P_MBODY], Iw0, p, p, jc0, jm0, jm0, 0)
    _bias_add_body(h, P[P_MBODY], Iw0, p, v, w_w, p, v, w_w, gz,
                   jc0, jm0, jm0, jm0, jm0, jq0, 0)

    for side in range(2):
        kin = kinL if side == 0 else kinR
        com = comL if side == 0 else comR
        base = 6 if side == 0 else 9
        jcols = np.array([base, base + 1, base + 2], dtype=np.int64)
        jaxs = np.empty((3, 3))
        jancs = np.empty((3, 3))
        jvancs = np.empty((3, 3))
        jadots = np.empty((3, 3))
        for i in range(3):
            jaxs[0, i] = kin[KIN_APL, i]
            jaxs[1, i] = kin[KIN_AFE, i]
            jaxs[2, i] = kin[KIN_AEL, i]
            jancs[0, i] = kin[KIN_RSH, i]
            jancs[1, i] = kin[KIN_RSH, i]
            jancs[2, i] = kin[KIN_RELB, i]
            jvancs[0, i] = kin[KIN_VSH, i]
            jvancs[1, i] = kin[KIN_VSH, i]
            jvancs[2, i] = kin[KIN_VELB, i]
            jadots[0, i] = kin[KIN_DPL, i]
            jadots[1, i] = kin[KIN_DFE, i]
            jadots[2, i] = kin[KIN_DEL, i]
        jqds = np.empty(3)
        jqds[0] = x[17] if side == 0 else x[19]
        jqds[1] = x[23] if side == 0 else x[24]
        jqds[2] = x[18] if side == 0 else x[20]

        Iw1 = _plate_inertia_world(kin, KIN_R2, P[P_M1], P[P_L1], P[P_C1])
        _mass_add_body(M, P[P_M1], Iw1, com[0], p, jcols[:2], jaxs[:2], jancs[:2], 2)
        _bias_add_body(h, P[P_M1], Iw1, com[0], com[1], kin[KIN_OM2], p, v, w_w, gz,
                       jcols[:2], jaxs[:2], jancs[:2], jvancs[:2], jadots[:2], jqds[:2], 2)

        Iw2 = _plate_inertia_world(kin, KIN_R3, P[P_M2], P[P_L2], P[P_C2])
        _mass_add_body(M, P[P_M2], Iw2, com[2], p, jcols, jaxs, jancs, 3)
        _bias_add_body(h, P[P_M2], Iw2, com[2], com[3], kin[KIN_OM3], p, v, w_w, gz,
                       jcols, jaxs, jancs, jvancs, jadots, jqds, 3)

        for e in range(ext_pts.shape[0]):
            b = ext_body[e]
            if side == 0 and b == 1:
                _ext_force_into(h, ext_F[e], ext_pts[e], p, jcols[:2], jaxs[:2], jancs[:2], 2)
            elif side == 0 and b == 2:
                _ext_force_into(h, ext_F[e], ext_pts[e], p, jcols, jaxs, jancs, 3)
            elif side == 1 and b == 3:
                _ext_force_into(h, ext_F[e], ext_pts[e], p, jcols[:2], jaxs[:2], jancs[:2], 2)
            elif side == 1 and b == 4:
                _ext_force_into(h, ext_F[e], ext_pts[e], p, jcols, jaxs, jancs, 3)

    for e in range(ext_pts.shape[0]):
        if ext_body[e] == 0:
            _ext_force_into(h, ext_F[e], ext_pts[e], p, jc0, jm0, jm0, 0)

    # mirror the joint columns into the lower triangle
    for a in range(12):
        for b in range(a + 1, 12):
            M[b, a] = M[a, b]

    # passive feather spring-dampers enter as joint torques
    h[7] -= -P[P_KFE] * (x[21] - P[P_FEREST]) - P[P_CFE] * x[23]
    h[10] -= -P[P_KFE] * (x[22] - P[P_FEREST]) - P[P_CFE] * x[24]

    return M, h


@njit(cache=True)
def _forward_dynamics_mh(M, h, u_cmd):
    """Partitioned solve with prescribed active-joint accelerations.

    Returns the 12-entry generalized acceleration and the active joint
    torques that enforce the commanded motion.
    """
    MUU = np.empty((8, 8))
    rhs = np.empty(8)
    for i in range(8):
        gi = GEN_UNKNOWN[i]
        for j in range(8):
            MUU[i, j] = M[gi, GEN_UNKNOWN[j]]
        s = -h[gi]
        for j in range(4):
            s -= M[gi, GEN_ACTIVE[j]] * u_cmd[j]
        rhs[i] = s
    du_U = _solve_spd(MUU, rhs)

    du = np.empty(12)
    for i in range(8):
        du[GEN_UNKNOWN[i]] = du_U[i]
    for j in range(4):
        du[GEN_ACTIVE[j]] = u_cmd[j]

    tau_a = np.empty(4)
    for j in range(4):
        gi = GEN_ACTIVE[j]
        s = h[gi]
        for k in range(12):
            s += M[gi, k] * du[k]
        tau_a[j] = s
    return du, tau_a


@njit(cache=True)
def _robot_deriv(x, du, Rb):
    """Map generalized accelerations to the 25-entry state derivative."""
    dx = np.empty(NX)
    dx[0:3] = x[7:10]
    dx[3:7] = _quat_derivative(x[3:7], x[10:13])
    dx[7:10] = du[3:6]
    for i in range(3):
        dx[10 + i] = Rb[0, i] * du[0] + Rb[1, i] * du[1] + Rb[2, i] * du[2]
    dx[13:17] = x[17:21]
    dx[17] = du[6]
    dx[18] = du[8]
    dx[19] = du[9]
    dx[20] = du[11]
    dx[21:23] = x[23:25]
    dx[23] = du[7]
    dx[24] = du[10]
    return dx


@njit(cache=True)
def _generalized_velocity(x, Rb):
    u = np.empty(12)
    for i in range(3):
        u[i] = Rb[i, 0] * x[10] + Rb[i, 1] * x[11] + Rb[i, 2] * x[12]
    u[3:6] = x[7:10]
    u[6] = x[17]
    u[7] = x[23]
    u[8] = x[18]
    u[9] = x[19]
    u[10] = x[24]
    u[11] = x[20]
    return u


@njit(cache=True)
def mass_matrix_and_bias(x, P, ext_pts, ext_F, ext_body):
    """Public wrapper: assemble M and h for a robot state vector."""
    Rb, w_w, kinL, comL, kinR, comR = _both_wings(x, P)
    return _assemble_mh(x, P, Rb, w_w, kinL, comL, kinR, comR,
                        ext_pts, ext_F, ext_body)


@njit(cache=True)
def forward_dynamics(x, P, u_cmd, ext_pts, ext_F, ext_body):
    """State derivative + generalized accelerations + active torques."""
    Rb, w_w, kinL, comL, kinR, comR = _both_wings(x, P)
    M, h = _assemble_mh(x, P, Rb, w_w, kinL, comL, kinR, comR,
                        ext_pts, ext_F, ext_body)
    du, tau_a = _forward_dynamics_mh(M, h, u_cmd)
    return _robot_deriv(x, du, Rb), du, tau_a


@njit(cache=True)
def point_velocities(x, P, pts, body):
    """World velocities of material points attached to the named bodies."""
    Rb, w_w, kinL, comL, kinR, comR = _both_wings(x, P)
    p = x[0:3]
    v = x[7:10]
    n = pts.shape[0]
    out = np.empty((n, 3))
    for e in range(n):
        b = body[e]
        if b == 0:
            out[e, 0] = v[0] + w_w[1] * (pts[e, 2] - p[2]) - w_w[2] * (pts[e, 1] - p[1])
            out[e, 1] = v[1] + w_w[2] * (pts[e, 0] - p[0]) - w_w[0] * (pts[e, 2] - p[2])
            out[e, 2] = v[2] + w_w[0] * (pts[e, 1] - p[1]) - w_w[1] * (pts[e, 0] - p[0])
        else:
            kin = kinL if b <= 2 else kinR
            if b == 1 or b == 3:
                ra, va, oma = KIN_RSH, KIN_VSH, KIN_OM2
            else:
                ra, va, oma = KIN_RELB, KIN_VELB, KIN_OM3
            rx = pts[e, 0] - kin[ra, 0]
            ry = pts[e, 1] - kin[ra, 1]
            rz = pts[e, 2] - kin[ra, 2]
            out[e, 0] = kin[va, 0] + kin[oma, 1] * rz - kin[oma, 2] * ry
            out[e, 1] = kin[va, 1] + kin[oma, 2] * rx - kin[oma, 0] * rz
            out[e, 2] = kin[va, 2] + kin[oma, 0] * ry - kin[oma, 1] * rx
    return out


@njit(cache=True)
def total_energy(x, P):
    """Kinetic + gravitational + feather-spring potential energy."""
    Rb, w_w, kinL, comL, kinR, comR = _both_wings(x, P)
    ext = np.empty((0, 3))
    extb = np.empty(0, dtype=np.int64)
    Pg = P.copy()
    Pg[P_G] = 0.0  # gravity handled explicitly below
    M, h = _assemble_mh(x, Pg, Rb, w_w, kinL, comL, kinR, comR, ext, ext, extb)
    u = _generalized_velocity(x, Rb)
    ke = 0.0
    for i in range(12):
        for j in range(12):
            ke += 0.5 * u[i] * M[i, j] * u[j]
    g = P[P_G]
    pe = -P[P_MBODY] * g * x[2]
    pe += -P[P_M1] * g * comL[0, 2] - P[P_M2] * g * comL[2, 2]
    pe += -P[P_M1] * g * comR[0, 2] - P[P_M2] * g * comR[2, 2]
    pe += 0.5 * P[P_KFE] * (x[21] - P[P_FEREST]) ** 2
    pe += 0.5 * P[P_KFE] * (x[22] - P[P_FEREST]) ** 2
    return ke + pe


@njit(cache=True)
def angular_momentum(x, P):
    """Total angular momentum about the world origin."""
    Rb, w_w, kinL, comL, kinR, comR = _both_wings(x, P)
    Ib = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            Ib[i, j] = P[P_IBODY + 3 * i + j]
    Iw0 = Rb @ Ib @ Rb.T
    L = np.empty(3)
    p = x[0:3]
    v = x[7:10]
    m0 = P[P_MBODY]
    L[0] = m0 * (p[1] * v[2] - p[2] * v[1]) + Iw0[0, 0] * w_w[0] + Iw0[0, 1] * w_w[1] + Iw0[0, 2] * w_w[2]
    L[1] = m0 * (p[2] * v[0] - p[0] * v[2]) + Iw0[1, 0] * w_w[0] + Iw0[1, 1] * w_w[1] + Iw0[1, 2] * w_w[2]
    L[2] = m0 * (p[0] * v[1] - p[1] * v[0]) + Iw0[2, 0] * w_w[0] + Iw0[2, 1] * w_w[1] + Iw0[2, 2] * w_w[2]
    for side in range(2):
        kin = kinL if side == 0 else kinR
        com = comL if side == 0 else comR
        Iw1 = _plate_inertia_world(kin, KIN_R2, P[P_M1], P[P_L1], P[P_C1])
        Iw2 = _plate_inertia_world(kin, KIN_R3, P[P_M2], P[P_L2], P[P_C2])
        for (Iw, ci, vi, omrow, m) in ((Iw1, 0, 1, KIN_OM2, P[P_M1]),
                                       (Iw2, 2, 3, KIN_OM3, P[P_M2])):
            cx, cy, cz = com[ci, 0], com[ci, 1], com[ci, 2]
            vx, vy, vz = com[vi, 0], com[vi, 1], com[vi, 2]
            ox, oy, oz = kin[omrow, 0], kin[omrow, 1], kin[omrow, 2]
            L[0] += m * (cy * vz - cz * vy) + Iw[0, 0] * ox + Iw[0, 1] * oy + Iw[0, 2] * oz
            L[1] += m * (cz * vx - cx * vz) + Iw[1, 0] * ox + Iw[1, 1] * oy + Iw[1, 2] * oz
            L[2] += m * (cx * vy - cy * vx) + Iw[2, 0] * ox + Iw[2, 1] * oy + Iw[2, 2] * oz
    return L


# --- aerodynamics ------------------------------------------------------------


@njit(cache=True)
def _segment_induced_into(out, px, py, pz, ax, ay, az, bx, by, bz, core2):
    """Accumulate the velocity induced by a unit vortex segment a->b.

    Finite-segment law with squared-core regularization so points on or
    near the filament stay bounded.
    """
    r1x, r1y, r1z = px - ax, py - ay, pz - az
    r2x, r2y, r2z = px - bx, py - by, pz - bz
    dlx, dly, dlz = bx - ax, by - ay, bz - az
    crx = r1y * r2z - r1z * r2y
    cry = r1z * r2x - r1x * r2z
    crz = r1x * r2y - r1y * r2x
    cr2 = crx * crx + cry * cry + crz * crz
    n1 = np.sqrt(r1x * r1x + r1y * r1y + r1z * r1z)
    n2 = np.sqrt(r2x * r2x + r2y * r2y + r2z * r2z)
    if n1 < 1e-14 or n2 < 1e-14:
        return
    dl2 = dlx * dlx + dly * dly + dlz * dlz
    denom = cr2 + core2 * dl2
    if denom < 1e-30:
        return
    dot = (dlx * (r1x / n1 - r2x / n2) + dly * (r1y / n1 - r2y / n2)
           + dlz * (r1z / n1 - r2z / n2))
    f = dot / (4.0 * np.pi * denom)
    out[0] += f * crx
    out[1] += f * cry
    out[2] += f * crz


@njit(cache=True)
def lifting_line_aic(ctrl, nhat, t_hat, widths, dstream, core):
    """Downwash influence matrix of discrete horseshoe vortices.

    ``ctrl`` are quarter-chord control points, ``t_hat`` the bound-vortex
    directions (circulation sense of positive lift), ``dstream`` the unit
    trailing-leg direction.  AIC[j, k] is the downwash (positive along
    -nhat_j) at control point j per unit circulation of horseshoe k.
    """
    n = ctrl.shape[0]
    far = 1.0e4
    core2 = core * core
    A = np.zeros((n, n))
    vind = np.empty(3)
    for k in range(n):
        half = 0.5 * widths[k]
        eax = ctrl[k, 0] - half * t_hat[k, 0]
        eay = ctrl[k, 1] - half * t_hat[k, 1]
        eaz = ctrl[k, 2] - half * t_hat[k, 2]
        ebx = ctrl[k, 0] + half * t_hat[k, 0]
        eby = ctrl[k, 1] + half * t_hat[k, 1]
        ebz = ctrl[k, 2] + half * t_hat[k, 2]
        fax = eax + far * dstream[0]
        fay = eay + far * dstream[1]
        faz = eaz + far * dstream[2]
        fbx = ebx + far * dstream[0]
        fby = eby + far * dstream[1]
        fbz = ebz + far * dstream[2]
        for j in range(n):
            vind[0] = 0.0
            vind[1] = 0.0
            vind[2] = 0.0
            px, py, pz = ctrl[j, 0], ctrl[j, 1], ctrl[j, 2]
            _segment_induced_into(vind, px, py, pz, fax, fay, faz, eax, eay, eaz, core2)
            _segment_induced_into(vind, px, py, pz, eax, eay, eaz, ebx, eby, ebz, core2)
            _segment_induced_into(vind, px, py, pz, ebx, eby, ebz, fbx, fby, fbz, core2)
            A[j, k] = -(vind[0] * nhat[j, 0] + vind[1] * nhat[j, 1] + vind[2] * nhat[j, 2])
    return A


@njit(cache=True)
def lifting_line_solve(ctrl, nhat, t_hat, widths, chords, dstream,
                       gamma_qs, speeds, cla, v_min):
    """Self-consistent circulation with induced-downwash coupling.

    Solves (I + D*AIC) Gamma = Gamma_qs with D = diag(cla*c/2); degenerate
    elements (relative speed below v_min) are pinned to zero circulation.
    Returns (Gamma, w_induced, ok); ok=False flags a failed solve.
    """
    n = ctrl.shape[0]
    if n == 1:
        return gamma_qs.copy(), np.zeros(n), True
    wmin = widths[0]
    for k in range(1, n):
        if widths[k] < wmin:
            wmin = widths[k]
    A = lifting_line_aic(ctrl, nhat, t_hat, widths, dstream, 0.05 * wmin)
    S = np.zeros((n, n))
    rhs = np.empty(n)
    for j in range(n):
        if speeds[j] < v_min:
            for k in range(n):
                S[j, k] = 1.0 if j == k else 0.0
            rhs[j] = 0.0
        else:
            for k in range(n):
                S[j, k] = (1.0 if j == k else 0.0) + 0.5 * chords[j] * cla * A[j, k]
            rhs[j] = gamma_qs[j]
    gam = _solve_lu(S, rhs)
    ok = True
    for j in range(n):
        if not np.isfinite(gam[j]):
            ok = False
    wind = A @ gam
    return gam, wind, ok


@njit(cache=True)
def _element_kinematics(x, P, E, Rb, w_w, kinL, kinR):
    """Per-element quarter- and three-quarter-chord kinematics.

    Returns quarter-chord positions/velocities, 3/4-chord velocities used
    for the quasi-steady inflow, section triads (chordwise, dorsal normal,
    bound-vortex direction), the normal velocity-product acceleration for
    the added-mass term, and the owning body index.
    """
    ne = E.shape[0]
    p = x[0:3]
    v = x[7:10]

    r_c4 = np.empty((ne, 3))
    v_c4 = np.empty((ne, 3))
    v_34 = np.empty((ne, 3))
    chat = np.empty((ne, 3))
    nhat = np.empty((ne, 3))
    that = np.empty((ne, 3))
    a_n = np.empty(ne)
    body = np.empty(ne, dtype=np.int64)

    for e in range(ne):
        side = int(E[e, 0])
        seg = int(E[e, 1])
        s_mid = E[e, 2]
        chord = E[e, 4]
        sgn = -1.0 if side == 0 else 1.0
        kin = kinL if side == 0 else kinR
        if seg == 0:
            rrow = KIN_R2
            arow = KIN_RSH
            vrow = KIN_VSH
            orow = KIN_OM2
            body[e] = 1 + 3 * side
        else:
            rrow = KIN_R3
            arow = KIN_RELB
            vrow = KIN_VELB
            orow = KIN_OM3
            body[e] = 2 + 3 * side

        ox, oy, oz = kin[orow, 0], kin[orow, 1], kin[orow, 2]
        # local offsets: quarter-chord (0, sgn*s, 0); 3/4 chord (-c/2, sgn*s, 0)
        sspan = sgn * s_mid
        r4x = kin[arow, 0] + kin[rrow + 0, 1] * sspan
        r4y = kin[arow, 1] + kin[rrow + 1, 1] * sspan
        r4z = kin[arow, 2] + kin[rrow + 2, 1] * sspan
        cb = -0.5 * chord
        r3x = r4x + kin[rrow + 0, 0] * cb
        r3y = r4y + kin[rrow + 1, 0] * cb
        r3z = r4z + kin[rrow + 2, 0] * cb

        d4x, d4y, d4z = r4x - kin[arow, 0], r4y - kin[arow, 1], r4z - kin[arow, 2]
        v4x = kin[vrow, 0] + oy * d4z - oz * d4y
        v4y = kin[vrow, 1] + oz * d4x - ox * d4z
        v4z = kin[vrow, 2] + ox * d4y - oy * d4x
        d3x, d3y, d3z = r3x - kin[arow, 0], r3y - kin[arow, 1], r3z - kin[arow, 2]
        v3x = kin[vrow, 0] + oy * d3z - oz * d3y
        v3y = kin[vrow, 1] + oz * d3x - ox * d3z
        v3z = kin[vrow, 2] + ox * d3y - oy * d3x

        # velocity-product acceleration of the 3/4-chord point
        qd_pl = x[17] if side == 0 else x[19]
        qd_fe = x[23] if side == 0 else x[24]
        qd_el = x[18] if side == 0 else x[20]
        ax = w_w[1] * (v3z - v[2]) - w_w[2] * (v3y - v[1])
        ay = w_w[2] * (v3x - v[0]) - w_w[0] * (v3z - v[2])
        az = w_w[0] * (v3y - v[1]) - w_w[1] * (v3x - v[0])
        for (arw, drw, vrw, qd) in ((KIN_APL, KIN_DPL, KIN_VSH, qd_pl),
                                    (KIN_AFE, KIN_DFE, KIN_VSH, qd_fe)):
            rxx = r3x - kin[KIN_RSH, 0]
            ryy = r3y - kin[KIN_RSH, 1]
            rzz = r3z - kin[KIN_RSH, 2]
            uxx = v3x - kin[vrw, 0]
            uyy = v3y - kin[vrw, 1]
            uzz = v3z - kin[vrw, 2]
            ax += (kin[drw, 1] * rzz - kin[drw, 2] * ryy + kin[arw, 1] * uzz - kin[arw, 2] * uyy) * qd
            ay += (kin[drw, 2] * rxx - kin[drw, 0] * rzz + kin[arw, 2] * uxx - kin[arw, 0] * uzz) * qd
            az += (kin[drw, 0] * ryy - kin[drw, 1] * rxx + kin[arw, 0] * uyy - kin[arw, 1] * uxx) * qd
        if seg == 1:
            rxx = r3x - kin[KIN_RELB, 0]
            ryy = r3y - kin[KIN_RELB, 1]
            rzz = r3z - kin[KIN_RELB, 2]
            uxx = v3x - kin[KIN_VELB, 0]
            uyy = v3y - kin[KIN_VELB, 1]
            uzz = v3z - kin[KIN_VELB, 2]
            ax += (kin[KIN_DEL, 1] * rzz - kin[KIN_DEL, 2] * ryy
                   + kin[KIN_AEL, 1] * uzz - kin[KIN_AEL, 2] * uyy) * qd_el
            ay += (kin[KIN_DEL, 2] * rxx - kin[KIN_DEL, 0] * rzz
                   + kin[KIN_AEL, 2] * uxx - kin[KIN_AEL, 0] * uzz) * qd_el
            az += (kin[KIN_DEL, 0] * ryy - kin[KIN_DEL, 1] * rxx
                   + kin[KIN_AEL, 0] * uyy - kin[KIN_AEL, 1] * uxx) * qd_el

        r_c4[e, 0], r_c4[e, 1], r_c4[e, 2] = r4x, r4y, r4z
        v_c4[e, 0], v_c4[e, 1], v_c4[e, 2] = v4x, v4y, v4z
        v_34[e, 0], v_34[e, 1], v_34[e, 2] = v3x, v3y, v3z
        for i in range(3):
            chat[e, i] = kin[rrow + i, 0]
            nhat[e, i] = -kin[rrow + i, 2]
            that[e, i] = kin[rrow + i, 1]
        a_n[e] = ax * nhat[e, 0] + ay * nhat[e, 1] + az * nhat[e, 2]

    return r_c4, v_c4, v_34, chat, nhat, that, a_n, body


@njit(cache=True)
def _stream_of(v_34, idx, vmin):
    """Unit trailing-leg direction: mean relative flow over one wing."""
    dx = 0.0
    dy = 0.0
    dz = 0.0
    for k in range(idx.shape[0]):
        dx -= v_34[idx[k], 0]
        dy -= v_34[idx[k], 1]
        dz -= v_34[idx[k], 2]
    d = np.empty(3)
    n = np.sqrt(dx * dx + dy * dy + dz * dz)
    if n < vmin:
        d[0] = -1.0  # arbitrary but fixed: degenerate wings carry no load
        d[1] = 0.0
        d[2] = 0.0
        return d
    d[0] = dx / n
    d[1] = dy / n
    d[2] = dz / n
    return d


@njit(cache=True)
def aero_core(xi, E, sides, r_c4, v_c4, v_34, chat, nhat, that, a_n, ref_pt, P):
    """Unsteady blade-element force evaluation from element kinematics.

    Pipeline per element: quasi-steady circulation from the clamped angle
    of attack, per-side lifting-line downwash coupling, indicial lag-state
    filtering of the quasi-steady inflow, then circulatory lift, profile
    and induced drag and the added-mass reaction.

    Returns (forces, xidot, gamma_eff, gamma_qs, w_induced, F_total,
    M_total about ref_pt, aero power, stall count, degenerate count); all
    vectors world-frame.
    """
    ne = E.shape[0]
    rho = P[P_RHO]
    cla = P[P_CLA]
    cd0 = P[P_CD0]
    stall = P[P_STALL]
    vmin = P[P_VMIN]

    fc = np.empty(ne)
    fn = np.empty(ne)
    V = np.empty(ne)
    gamma_qs = np.empty(ne)
    n_stall = 0
    n_degen = 0

    for e in range(ne):
        fcx = -(v_34[e, 0] * chat[e, 0] + v_34[e, 1] * chat[e, 1] + v_34[e, 2] * chat[e, 2])
        fnx = -(v_34[e, 0] * nhat[e, 0] + v_34[e, 1] * nhat[e, 1] + v_34[e, 2] * nhat[e, 2])
        fc[e] = fcx
        fn[e] = fnx
        V[e] = np.sqrt(fcx * fcx + fnx * fnx)
        if V[e] < vmin:
            gamma_qs[e] = 0.0
            n_degen += 1
            continue
        alpha = np.arctan2(fnx, -fcx)
        if alpha > stall:
            alpha = stall
            n_stall += 1
        elif alpha < -stall:
            alpha = -stall
            n_stall += 1
        w_qs = V[e] * np.sin(alpha)
        gamma_qs[e] = 0.5 * E[e, 4] * cla * w_qs

    gam = gamma_qs.copy()
    wind = np.zeros(ne)
    if P[P_LL] != 0.0:
        for side in range(2):
            cnt = 0
            for e in range(ne):
                if sides[e] == side:
                    cnt += 1
            if cnt < 2:
                continue
            idx = np.empty(cnt, dtype=np.int64)
            k = 0
            for e in range(ne):
                if sides[e] == side:
                    idx[k] = e
                    k += 1
            ctrl = np.empty((cnt, 3))
            nh = np.empty((cnt, 3))
            th = np.empty((cnt, 3))
            wd = np.empty(cnt)
            ch = np.empty(cnt)
            gq = np.empty(cnt)
            sp = np.empty(cnt)
            for k in range(cnt):
                e = idx[k]
                for i in range(3):
                    ctrl[k, i] = r_c4[e, i]
                    nh[k, i] = nhat[e, i]
                    th[k, i] = that[e, i]
                wd[k] = E[e, 3]
                ch[k] = E[e, 4]
                gq[k] = gamma_qs[e]
                sp[k] = V[e]
            dstr = _stream_of(v_34, idx, vmin)
            g_w, wi_w, ok = lifting_line_solve(ctrl, nh, th, wd, ch, dstr, gq, sp,
                                               cla, vmin)
            if ok:
                for k in range(cnt):
                    gam[idx[k]] = g_w[k]
                    wind[idx[k]] = wi_w[k]

    forces = np.zeros((ne, 3))
    xidot = np.zeros(2 * ne)
    gamma_eff = np.zeros(ne)
    Ftx = 0.0
    Fty = 0.0
    Ftz = 0.0
    Mtx = 0.0
    Mty = 0.0
    Mtz = 0.0
    p_aero = 0.0

    for e in range(ne):
        c = E[e, 4]
        ds = E[e, 3]
        if V[e] < vmin:
            continue
        w_src = gam[e] / (0.5 * c * cla)
        nu = 2.0 * V[e] / c
        xidot[2 * e] = nu * WB1 * (w_src - xi[2 * e])
        xidot[2 * e + 1] = nu * WB2 * (w_src - xi[2 * e + 1])
        w_eff = (1.0 - WA1 - WA2) * w_src + WA1 * xi[2 * e] + WA2 * xi[2 * e + 1]
        g_eff = 0.5 * c * cla * w_eff
        gamma_eff[e] = g_eff

        inv_v = 1.0 / V[e]
        lift = rho * V[e] * g_eff * ds
        drag = 0.5 * rho * V[e] * V[e] * c * cd0 * ds + rho * g_eff * wind[e] * ds
        am = -rho * np.pi * 0.25 * c * c * ds * a_n[e] * P[P_AM]
        Fex = 0.0
        Fey = 0.0
        Fez = 0.0
        for i in range(3):
            lh = (fn[e] * chat[e, i] - fc[e] * nhat[e, i]) * inv_v
            fh = (fc[e] * chat[e, i] + fn[e] * nhat[e, i]) * inv_v
            Fi = lift * lh + drag * fh + am * nhat[e, i]
            forces[e, i] = Fi
            if i == 0:
                Fex = Fi
            elif i == 1:
                Fey = Fi
            else:
                Fez = Fi
        Ftx += Fex
        Fty += Fey
        Ftz += Fez
        rx = r_c4[e, 0] - ref_pt[0]
        ry = r_c4[e, 1] - ref_pt[1]
        rz = r_c4[e, 2] - ref_pt[2]
        Mtx += ry * Fez - rz * Fey
        Mty += rz * Fex - rx * Fez
        Mtz += rx * Fey - ry * Fex
        p_aero += Fex * v_c4[e, 0] + Fey * v_c4[e, 1] + Fez * v_c4[e, 2]

    F_tot = np.array([Ftx, Fty, Ftz])
    M_tot = np.array([Mtx, Mty, Mtz])
    return (forces, xidot, gamma_eff, gamma_qs, wind, F_tot, M_tot, p_aero,
            n_stall, n_degen)


@njit(cache=True)
def _aero_forces(x, xi, P, E, Rb, w_w, kinL, kinR):
    """Flight-path aero evaluation: kinematics + aero_core + body frame."""
    r_c4, v_c4, v_34, chat, nhat, that, a_n, body = _element_kinematics(
        x, P, E, Rb, w_w, kinL, kinR)
    ne = E.shape[0]
    sides = np.empty(ne, dtype=np.int64)
    for e in range(ne):
        sides[e] = int(E[e, 0])
    (forces, xidot, gamma_eff, gamma_qs, wind, F_tot, M_tot, p_aero,
     n_stall, n_degen) = aero_core(xi, E, sides, r_c4, v_c4, v_34, chat, nhat,
                                   that, a_n, x[0:3], P)
    Fb = np.empty(3)
    Mb = np.empty(3)
    for i in range(3):
        Fb[i] = Rb[0, i] * F_tot[0] + Rb[1, i] * F_tot[1] + Rb[2, i] * F_tot[2]
        Mb[i] = Rb[0, i] * M_tot[0] + Rb[1, i] * M_tot[1] + Rb[2, i] * M_tot[2]
    return forces, r_c4, body, xidot, gamma_eff, Fb, Mb, p_aero, n_stall, n_degen


# --- gait generation ---------------------------------------------------------


@njit(cache=True)
def gait_eval(t, G, Y, Ydot):
    """Shoulder/elbow targets (position, velocity, acceleration).

    Output is a (3, 4) array: rows pos/vel/acc, columns
    [shoulder_L, elbow_L, shoulder_R, elbow_R].  The structure state
    shifts per-wing shoulder bias (link 1), scales shoulder amplitude
    (link 2) and shifts elbow phase (link 3).
    """
    freq, sh_amp, sh_bias = G[0], G[1], G[2]
    el_amp, el_phase, el_bias = G[3], G[4], G[5]
    asym, k_b, k_a, k_p = G[6], G[7], G[8], G[9]
    out = np.empty((3, 4))
    tau = 2.0 * np.pi * freq * t
    taud = 2.0 * np.pi * freq
    st, ct = np.sin(tau), np.cos(tau)

    for side in range(2):
        o = 6 * side  # structure offset: links 1..3 of this wing
        y1, yd1, ydd1 = Y[o], Y[o + 1], Ydot[o + 1]
        y2, yd2, ydd2 = Y[o + 2], Y[o + 3], Ydot[o + 3]
        y3, yd3, ydd3 = Y[o + 4], Y[o + 5], Ydot[o + 5]

        amp = sh_amp * (1.0 + k_a * y2)
        sh = sh_bias + k_b * y1 + amp * st
        shd = k_b * yd1 + sh_amp * k_a * yd2 * st + amp * ct * taud
        shdd = (k_b * ydd1 + sh_amp * k_a * (ydd2 * st + 2.0 * yd2 * ct * taud)
                - amp * st * taud * taud)

        ph = tau + el_phase + k_p * y3
        phd = taud + k_p * yd3
        phdd = k_p * ydd3
        sp, cp = np.sin(ph), np.cos(ph)
        el = el_bias + el_amp * sp + 0.5 * asym * el_amp * (1.0 + ct)
        eld = el_amp * cp * phd - 0.5 * asym * el_amp * st * taud
        eldd = (el_amp * (-sp * phd * phd + cp * phdd)
                - 0.5 * asym * el_amp * ct * taud * taud)

        out[0, 2 * side] = sh
        out[1, 2 * side] = shd
        out[2, 2 * side] = shdd
        out[0, 2 * side + 1] = el
        out[1, 2 * side + 1] = eld
        out[2, 2 * side + 1] = eldd
    return out


# --- cascade right-hand sides ------------------------------------------------


@njit(cache=True)
def cascade_rhs(xa, t, P, E, G, As, Bs, Om):
    """Full plant derivative: robot + structure + indicial aero states.

    The regulator command Om is held constant across the call (zero-order
    hold between controller updates).  Returns (dxa, diag).
    """
    ne = E.shape[0]
    x = xa[0:NX]
    Y = xa[NX:NX + NY]
    xi = xa[NX + NY:NX + NY + 2 * ne]

    Rb, w_w, kinL, comL, kinR, comR = _both_wings(x, P)
    (forces, pts, body, xidot, gamma_eff, Fb, Mb, p_aero,
     n_stall, n_degen) = _aero_forces(x, xi, P, E, Rb, w_w, kinL, kinR)

    Ydot = As @ Y + Bs @ Om
    gait = gait_eval(t, G, Y, Ydot)
    u_cmd = np.empty(4)
    for j in range(4):
        u_cmd[j] = (gait[2, j] + P[P_KP] * (gait[0, j] - x[13 + j])
                    + P[P_KD] * (gait[1, j] - x[17 + j]))

    M, h = _assemble_mh(x, P, Rb, w_w, kinL, comL, kinR, comR, pts, forces, body)
    du, tau_a = _forward_dynamics_mh(M, h, u_cmd)

    dxa = np.empty(xa.shape[0])
    dxa[0:NX] = _robot_deriv(x, du, Rb)
    dxa[NX:NX + NY] = Ydot
    dxa[NX + NY:NX + NY + 2 * ne] = xidot

    diag = np.zeros(NDIAG)
    for i in range(3):
        diag[D_FB + i] = Fb[i]
        diag[D_MB + i] = Mb[i]
    p_act = 0.0
    for j in range(4):
        diag[D_TAU + j] = tau_a[j]
        p_act += tau_a[j] * x[17 + j]
    diag[D_PAERO] = p_aero
    diag[D_PACT] = p_act
    diag[D_PDAMP] = P[P_CFE] * (x[23] * x[23] + x[24] * x[24])
    diag[D_STALL] = n_stall
    diag[D_DEGEN] = n_degen
    return dxa, diag


@njit(cache=True)
def _renorm_quat(xa):
    n = np.sqrt(xa[3] ** 2 + xa[4] ** 2 + xa[5] ** 2 + xa[6] ** 2)
    if n > 0.0:
        xa[3] /= n
        xa[4] /= n
        xa[5] /= n
        xa[6] /= n


@njit(cache=True)
def _finite(a):
    for i in range(a.shape[0]):
        if not np.isfinite(a[i]):
            return False
    return True


@njit(cache=True)
def rk4_plant_span(xa, t0, dt, nsteps, P, E, G, As, Bs, Om,
                   decim, step0, log_t, log_state, log_diag, cursor):
    """Integrate the plant over ``nsteps`` fine steps under constant Om.

    Logs (t, augmented state, diagnostics) every ``decim`` global steps,
    starting from global step index ``step0``, writing at ``cursor``
    onwards.  Returns (state, new cursor, status, bad_stage) where status
    is the step index at which a non-finite value appeared, or -1 if the
    span completed cleanly.
    """
    cur = cursor
    for k in range(nsteps):
        t = t0 + k * dt
        k1, d1 = cascade_rhs(xa, t, P, E, G, As, Bs, Om)
        if not _finite(k1):
            return xa, cur, step0 + k, 1
        if (step0 + k) % decim == 0:
            log_t[cur] = t
            for i in range(xa.shape[0]):
                log_state[cur, i] = xa[i]
            for i in range(NDIAG):
                log_diag[cur, i] = d1[i]
            cur += 1
        k2, d2 = cascade_rhs(xa + 0.5 * dt * k1, t + 0.5 * dt, P, E, G, As, Bs, Om)
        if not _finite(k2):
            return xa, cur, step0 + k, 2
        k3, d3 = cascade_rhs(xa + 0.5 * dt * k2, t + 0.5 * dt, P, E, G, As, Bs, Om)
        if not _finite(k3):
            return xa, cur, step0 + k, 3
        k4, d4 = cascade_rhs(xa + dt * k3, t + dt, P, E, G, As, Bs, Om)
        if not _finite(k4):
            return xa, cur, step0 + k, 4
        xa = xa + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _renorm_quat(xa)
    return xa, cur, -1, 0


# --- controller prediction ---------------------------------------------------


@njit(cache=True)
def _structure_interp(tk, Yk, Fk, Omk, t, Yout, Oout):
    """Cubic state / linear control interpolation on the knot grid.

    Uses the cubic with endpoint values Y and endpoint slopes F (the
    structure dynamics at the knots); writes Y(t) and Om(t) in place.
    """
    nk = tk.shape[0]
    j = nk - 2
    for i in range(nk - 1):
        if t < tk[i + 1]:
            j = i
            break
    h = tk[j + 1] - tk[j]
    s = (t - tk[j]) / h
    for i in range(NY):
        c0 = Yk[j, i]
        c1 = h * Fk[j, i]
        c2 = -3.0 * Yk[j, i] - 2.0 * h * Fk[j, i] + 3.0 * Yk[j + 1, i] - h * Fk[j + 1, i]
        c3 = 2.0 * Yk[j, i] + h * Fk[j, i] - 2.0 * Yk[j + 1, i] + h * Fk[j + 1, i]
        Yout[i] = c0 + s * (c1 + s * (c2 + s * c3))
    m = Omk.shape[1]
    for i in range(m):
        Oout[i] = Omk[j, i] + s * (Omk[j + 1, i] - Omk[j, i])


@njit(cache=True)
def cascade_rhs_pred(xr, t, P, E, G, As, Bs, tk, Yk, Fk, Omk):
    """Prediction-model derivative: robot + aero states only.

    The structure trajectory is read from the collocation interpolant
    rather than integrated, which is what couples the decision variables
    to the predicted attitude.
    """
    ne = E.shape[0]
    x = xr[0:NX]
    xi = xr[NX:NX + 2 * ne]

    Y = np.empty(NY)
    Om = np.empty(Omk.shape[1])
    _structure_interp(tk, Yk, Fk, Omk, t, Y, Om)
    Ydot = As @ Y + Bs @ Om

    Rb, w_w, kinL, comL, kinR, comR = _both_wings(x, P)
    (forces, pts, body, xidot, gamma_eff, Fb, Mb, p_aero,
     n_stall, n_degen) = _aero_forces(x, xi, P, E, Rb, w_w, kinL, kinR)

    gait = gait_eval(t, G, Y, Ydot)
    u_cmd = np.empty(4)
    for j in range(4):
        u_cmd[j] = (gait[2, j] + P[P_KP] * (gait[0, j] - x[13 + j])
                    + P[P_KD] * (gait[1, j] - x[17 + j]))

    M, h = _assemble_mh(x, P, Rb, w_w, kinL, comL, kinR, comR, pts, forces, body)
    du, tau_a = _forward_dynamics_mh(M, h, u_cmd)

    dxr = np.empty(xr.shape[0])
    dxr[0:NX] = _robot_deriv(x, du, Rb)
    dxr[NX:NX + 2 * ne] = xidot
    return dxr


@njit(cache=True)
def _attitude_sample(x):
    """[roll, pitch, wx, wy, wz] with pitch clamped away from the poles.

    Prediction-only helper: trial decision vectors may reach extreme
    attitudes, where the clamped angles keep the cost finite and huge.
    """
    R = _quat_to_matrix(x[3:7])
    sp = -R[2, 0]
    if sp > 1.0:
        sp = 1.0
    elif sp < -1.0:
        sp = -1.0
    z = np.empty(5)
    z[0] = np.arctan2(R[2, 1], R[2, 2])
    z[1] = np.arcsin(sp)
    z[2] = x[10]
    z[3] = x[11]
    z[4] = x[12]
    return z


@njit(cache=True)
def predict_attitude(xr0, tk, Yk, Omk, P, E, G, As, Bs, nsub):
    """Roll out the cascade over the horizon and sample z at every knot.

    Integrates with RK4 using ``nsub`` substeps per knot interval.
    Returns (z_knots, ok); ok=False means a non-finite state appeared.
    """
    nk = tk.shape[0]
    Fk = np.empty((nk, NY))
    for j in range(nk):
        Fk[j] = As @ Yk[j] + Bs @ Omk[j]

    z = np.zeros((nk, 5))
    xr = xr0.copy()
    z[0] = _attitude_sample(xr)
    for j in range(nk - 1):
        dt = (tk[j + 1] - tk[j]) / nsub
        for s in range(nsub):
            t = tk[j] + s * dt
            k1 = cascade_rhs_pred(xr, t, P, E, G, As, Bs, tk, Yk, Fk, Omk)
            k2 = cascade_rhs_pred(xr + 0.5 * dt * k1, t + 0.5 * dt, P, E, G, As, Bs, tk, Yk, Fk, Omk)
            k3 = cascade_rhs_pred(xr + 0.5 * dt * k2, t + 0.5 * dt, P, E, G, As, Bs, tk, Yk, Fk, Omk)
            k4 = cascade_rhs_pred(xr + dt * k3, t + dt, P, E, G, As, Bs, tk, Yk, Fk, Omk)
            xr = xr + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            _renorm_quat(xr)
            if not _finite(xr):
                return z, False
        z[j + 1] = _attitude_sample(xr)
    return z, True
