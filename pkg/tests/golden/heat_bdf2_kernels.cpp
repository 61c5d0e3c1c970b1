/* Generated finite element integrand kernels.
 *
 * Unknown: u
 * Time scheme: bdf2
 *
 * Conventions:
 *   fe.N(i)            basis function i at the current quadrature point
 *   fe.dN(i, k)        derivative of basis function i along axis k
 *   fe.detJxW()        quadrature weight times the volume Jacobian
 *   fe.position()      coordinates of the quadrature point (ZEROPTV)
 *   fe.previousValue(k)
 *                      solution value k steps back, interpolated at the
 *                      point. History storage is site specific, so the
 *                      embedding code maps this accessor onto its own
 *                      buffers.
 *
 * Surface kernels run at quadrature points of surrogate boundary faces
 * and receive extra data from the caller:
 *   wdetj        quadrature weight times the face Jacobian
 *   n_tilde[k]   unit normal of the surrogate face
 *   n_true[k]    unit normal of the true boundary at the mapped point
 *   d_shift[k]   shift vector from the face point to the true boundary
 *   h_elem       edge length of the face's owner element
 *   g_dirichlet  boundary value data at the mapped point
 *   g_neumann    boundary flux data at the mapped point
 */

/* Coefficient table /////////////////////////////
Externally supplied symbols read by these kernels:
  alpha        scalar coefficient
  dt           time step size
*/

/* Volume integrals //////////////////////////////
Called once for each quadrature point, inside:
while (fe.next_itg_pt()) {
  Integrands_Ae(fe, Ae);
}
*/
void Integrands_Ae(const FEMLIB::FEMElm &fe,
            FEMLIB::ZeroMatrix<double> &Ae) {
  using namespace FEMLIB;
  // # of dimensions: 1, 2, or 3
  const int n_dimensions = 3;
  // # of basis functions
  const int n_basis_functions = fe.nbf();
  // (determinant of J) cross W
  const double wdetj = fe.detJxW();
  // coordinates of this point
  const ZEROPTV p = fe.position();

  for (int row = 0; row < n_basis_functions; row++) {
    for (int col = 0; col < n_basis_functions; col++) {
      ////////////////////////////////////////////
      // This is generated from the input expressions
      double N = 0.0;
      N += (fe.N(row)*(wdetj * 1.5)*fe.N(col));
      N += (fe.dN(row, 0)*(wdetj * dt)*fe.dN(col, 0));
      N += (fe.dN(row, 1)*(wdetj * dt)*fe.dN(col, 1));
      N += (fe.dN(row, 2)*(wdetj * dt)*fe.dN(col, 2));
      Ae(row, col) += N;
      ////////////////////////////////////////////
    }
  }
}

void Integrands_be(const FEMLIB::FEMElm &fe,
            FEMLIB::ZEROARRAY<double> &be) {
  using namespace FEMLIB;
  // # of basis functions
  const int n_basis_functions = fe.nbf();
  // (determinant of J) cross W
  const double wdetj = fe.detJxW();
  // coordinates of this point
  const ZEROPTV p = fe.position();

  // Evaluate values carried over from previous steps.
  const double value_u_prev1 = fe.previousValue(1); // u, 1 step back
  const double value_u_prev2 = fe.previousValue(2); // u, 2 steps back

  for (int row = 0; row < n_basis_functions; row++) {
    ///////////////////////////////////////////////
    // This is generated from the input expressions
    double N = 0.0;
    N += (fe.N(row)*(wdetj * 2 * value_u_prev1));
    N += (fe.N(row)*(wdetj * (-0.5 * value_u_prev2)));
    be(row) += N;
    ///////////////////////////////////////////////
  }
}

/* Boundary integrals, value-condition regions ///
Called once for each quadrature point on surrogate
faces whose mapped boundary point carries a value
(Dirichlet) condition.
*/
void Integrands_Ae_dirichlet(const FEMLIB::FEMElm &fe,
            const double wdetj, const double *n_tilde,
            const double *n_true, const double *d_shift,
            const double h_elem, const double g_dirichlet,
            FEMLIB::ZeroMatrix<double> &Ae) {
  using namespace FEMLIB;
  const int n_basis_functions = fe.nbf();
  // coordinates of this point
  const ZEROPTV p = fe.position();

  for (int row = 0; row < n_basis_functions; row++) {
    for (int col = 0; col < n_basis_functions; col++) {
      ////////////////////////////////////////////
      // This is generated from the input expressions
      double N = 0.0;
      N += (fe.N(row)*(wdetj * (-(n_tilde[0] * dt)))*fe.dN(col, 0));
      N += (fe.N(row)*(wdetj * (-(n_tilde[1] * dt)))*fe.dN(col, 1));
      N += (fe.N(row)*(wdetj * (-(n_tilde[2] * dt)))*fe.dN(col, 2));
      N += (fe.dN(row, 0)*(wdetj * (-(n_tilde[0] * dt)))*fe.N(col));
      N += (fe.dN(row, 0)*(wdetj * (-(n_tilde[0] * d_shift[0] * dt)))*fe.dN(col, 0));
      N += (fe.dN(row, 0)*(wdetj * (-(n_tilde[0] * d_shift[1] * dt)))*fe.dN(col, 1));
      N += (fe.dN(row, 0)*(wdetj * (-(n_tilde[0] * d_shift[2] * dt)))*fe.dN(col, 2));
      N += (fe.dN(row, 1)*(wdetj * (-(n_tilde[1] * dt)))*fe.N(col));
      N += (fe.dN(row, 1)*(wdetj * (-(n_tilde[1] * d_shift[0] * dt)))*fe.dN(col, 0));
      N += (fe.dN(row, 1)*(wdetj * (-(n_tilde[1] * d_shift[1] * dt)))*fe.dN(col, 1));
      N += (fe.dN(row, 1)*(wdetj * (-(n_tilde[1] * d_shift[2] * dt)))*fe.dN(col, 2));
      N += (fe.dN(row, 2)*(wdetj * (-(n_tilde[2] * dt)))*fe.N(col));
      N += (fe.dN(row, 2)*(wdetj * (-(n_tilde[2] * d_shift[0] * dt)))*fe.dN(col, 0));
      N += (fe.dN(row, 2)*(wdetj * (-(n_tilde[2] * d_shift[1] * dt)))*fe.dN(col, 1));
      N += (fe.dN(row, 2)*(wdetj * (-(n_tilde[2] * d_shift[2] * dt)))*fe.dN(col, 2));
      N += (fe.N(row)*(wdetj * alpha / h_elem * dt)*fe.N(col));
      N += (fe.dN(row, 0)*(wdetj * alpha / h_elem * d_shift[0] * dt)*fe.N(col));
      N += (fe.dN(row, 1)*(wdetj * alpha / h_elem * d_shift[1] * dt)*fe.N(col));
      N += (fe.dN(row, 2)*(wdetj * alpha / h_elem * d_shift[2] * dt)*fe.N(col));
      N += (fe.N(row)*(wdetj * alpha / h_elem * d_shift[0] * dt)*fe.dN(col, 0));
      N += (fe.dN(row, 0)*(wdetj * alpha / h_elem * d_shift[0] * d_shift[0] * dt)*fe.dN(col, 0));
      N += (fe.dN(row, 1)*(wdetj * alpha / h_elem * d_shift[0] * d_shift[1] * dt)*fe.dN(col, 0));
      N += (fe.dN(row, 2)*(wdetj * alpha / h_elem * d_shift[0] * d_shift[2] * dt)*fe.dN(col, 0));
      N += (fe.N(row)*(wdetj * alpha / h_elem * d_shift[1] * dt)*fe.dN(col, 1));
      N += (fe.dN(row, 0)*(wdetj * alpha / h_elem * d_shift[1] * d_shift[0] * dt)*fe.dN(col, 1));
      N += (fe.dN(row, 1)*(wdetj * alpha / h_elem * d_shift[1] * d_shift[1] * dt)*fe.dN(col, 1));
      N += (fe.dN(row, 2)*(wdetj * alpha / h_elem * d_shift[1] * d_shift[2] * dt)*fe.dN(col, 1));
      N += (fe.N(row)*(wdetj * alpha / h_elem * d_shift[2] * dt)*fe.dN(col, 2));
      N += (fe.dN(row, 0)*(wdetj * alpha / h_elem * d_shift[2] * d_shift[0] * dt)*fe.dN(col, 2));
      N += (fe.dN(row, 1)*(wdetj * alpha / h_elem * d_shift[2] * d_shift[1] * dt)*fe.dN(col, 2));
      N += (fe.dN(row, 2)*(wdetj * alpha / h_elem * d_shift[2] * d_shift[2] * dt)*fe.dN(col, 2));
      Ae(row, col) += N;
      ////////////////////////////////////////////
    }
  }
}

void Integrands_be_dirichlet(const FEMLIB::FEMElm &fe,
            const double wdetj, const double *n_tilde,
            const double *n_true, const double *d_shift,
            const double h_elem, const double g_dirichlet,
            FEMLIB::ZEROARRAY<double> &be) {
  using namespace FEMLIB;
  const int n_basis_functions = fe.nbf();
  // coordinates of this point
  const ZEROPTV p = fe.position();

  for (int row = 0; row < n_basis_functions; row++) {
    ///////////////////////////////////////////////
    // This is generated from the input expressions
    double N = 0.0;
    N += (fe.dN(row, 0)*(wdetj * (-(n_tilde[0] * g_dirichlet * dt))));
    N += (fe.dN(row, 1)*(wdetj * (-(n_tilde[1] * g_dirichlet * dt))));
    N += (fe.dN(row, 2)*(wdetj * (-(n_tilde[2] * g_dirichlet * dt))));
    N += (fe.N(row)*(wdetj * alpha / h_elem * g_dirichlet * dt));
    N += (fe.dN(row, 0)*(wdetj * alpha / h_elem * g_dirichlet * d_shift[0] * dt));
    N += (fe.dN(row, 1)*(wdetj * alpha / h_elem * g_dirichlet * d_shift[1] * dt));
    N += (fe.dN(row, 2)*(wdetj * alpha / h_elem * g_dirichlet * d_shift[2] * dt));
    be(row) += N;
    ///////////////////////////////////////////////
  }
}

/* Boundary integrals, flux-condition regions ////
Called once for each quadrature point on surrogate
faces whose mapped boundary point carries a flux
(Neumann) condition.
*/
void Integrands_Ae_neumann(const FEMLIB::FEMElm &fe,
            const double wdetj, const double *n_tilde,
            const double *n_true, const double *d_shift,
            const double h_elem, const double g_neumann,
            FEMLIB::ZeroMatrix<double> &Ae) {
  using namespace FEMLIB;
  const int n_basis_functions = fe.nbf();
  // coordinates of this point
  const ZEROPTV p = fe.position();

  for (int row = 0; row < n_basis_functions; row++) {
    for (int col = 0; col < n_basis_functions; col++) {
      ////////////////////////////////////////////
      // This is generated from the input expressions
      double N = 0.0;

      Ae(row, col) += N;
      ////////////////////////////////////////////
    }
  }
}

void Integrands_be_neumann(const FEMLIB::FEMElm &fe,
            const double wdetj, const double *n_tilde,
            const double *n_true, const double *d_shift,
            const double h_elem, const double g_neumann,
            FEMLIB::ZEROARRAY<double> &be) {
  using namespace FEMLIB;
  const int n_basis_functions = fe.nbf();
  // coordinates of this point
  const ZEROPTV p = fe.position();

  for (int row = 0; row < n_basis_functions; row++) {
    ///////////////////////////////////////////////
    // This is generated from the input expressions
    double N = 0.0;

    be(row) += N;
    ///////////////////////////////////////////////
  }
}
