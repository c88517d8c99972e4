from rest_framework.pagination import PageNumberPagination
from rest_framework.response import Response


class ReportPagination(PageNumberPagination):
    """
    Paginates persisted runs. The envelope carries the run count and the
    current page so report scripts can walk every page.
    """
    page_size_query_param = 'page_size'
    max_page_size = 200

    def get_paginated_response(self, data):
        paginator = self.page.paginator
        return Response({
            'pagination': {
                'count': paginator.count,
                'page': self.page.number,
                'total_pages': paginator.num_pages,
                'next': self.get_next_link(),
                'previous': self.get_previous_link(),
            },
            'results': data,
        })


class ReportRowPagination(ReportPagination):
    # One run holds a few hundred rows; a single page should cover it.
    page_size = 500
    max_page_size = 5000
